//! Continuous nonselective cavity measurement with number-state
//! stabilizing feedback.
//!
//! Probe atoms dephased by the cavity photon number are measured in the
//! bases labelled by k; each basis contributes measurement operators
//! M_{±,k} = Σ_{n=0}^d ⟨±_k|+_n⟩ |n⟩⟨n| with ⟨+_k|+_n⟩ = cos(π(n−k)/2d)
//! and ⟨−_k|+_n⟩ = i·sin(π(n−k)/2d). The outcome (+,0) triggers a photon
//! addition, which turns M_{+,0} into Σ_n ⟨+_0|+_n⟩ |n+1⟩⟨n| and pins the
//! dynamics to |d⟩ since its coefficient vanishes at n = d.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{CMat, ZERO};
use crate::model::{OpenSystem, Structure};
use crate::models::fock::number_op;

/// Probe-basis overlap ⟨+_k|+_n⟩.
pub fn overlap_plus(d: usize, k: usize, n: usize) -> f64 {
    (PI * (n as f64 - k as f64) / (2.0 * d as f64)).cos()
}

/// Probe-basis overlap ⟨−_k|+_n⟩ (purely imaginary).
pub fn overlap_minus(d: usize, k: usize, n: usize) -> C64 {
    C64::new(0.0, (PI * (n as f64 - k as f64) / (2.0 * d as f64)).sin())
}

/// Cavity system with H = ω a†a and jump operators √(γ/|bases|)·M_{j,k}
/// for j ∈ {+, −} and k ∈ bases; the (+,0) operator carries the feedback
/// index shift when 0 ∈ bases.
pub fn measurement_feedback(
    d: usize,
    bases: &[usize],
    gamma: f64,
    omega: f64,
    fock_dim: usize,
) -> Result<OpenSystem> {
    if bases.is_empty() {
        return Err(Error::InvalidModel("at least one measurement basis required".into()));
    }
    if let Some(&k) = bases.iter().find(|&&k| k > d) {
        return Err(Error::InvalidModel(format!("basis index {k} exceeds d = {d}")));
    }
    if fock_dim < d + 2 {
        return Err(Error::TruncationTooSmall {
            reason: format!("fock_dim {fock_dim} cannot hold the feedback target |{}⟩", d + 1),
        });
    }
    let scale = C64::new((gamma / bases.len() as f64).sqrt(), 0.0);
    let mut jump_ops = Vec::new();
    let mut labels = Vec::new();
    for &k in bases {
        // M_{+,k}
        let mut m_plus = CMat::from_elem((fock_dim, fock_dim), ZERO);
        let feedback = k == 0;
        for n in 0..=d {
            let coeff = C64::new(overlap_plus(d, k, n), 0.0);
            if feedback {
                m_plus[[n + 1, n]] = coeff;
            } else {
                m_plus[[n, n]] = coeff;
            }
        }
        jump_ops.push(&m_plus * scale);
        labels.push(format!("M+{k}{}", if feedback { " feedback" } else { "" }));

        // M_{−,k}
        let mut m_minus = CMat::from_elem((fock_dim, fock_dim), ZERO);
        for n in 0..=d {
            m_minus[[n, n]] = overlap_minus(d, k, n);
        }
        jump_ops.push(&m_minus * scale);
        labels.push(format!("M-{k}"));
    }
    let h = number_op(fock_dim) * C64::new(omega, 0.0);
    OpenSystem::new(h, jump_ops, labels, Structure::Dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, dagger, trace};
    use crate::models::fock::{fock_ket, outer};

    #[test]
    fn effects_sum_to_identity_per_basis() {
        // F_+ + F_− = 𝟙 on span{|0⟩..|d⟩}; the feedback index shift leaves
        // the effects untouched.
        let d = 19;
        let sys = measurement_feedback(d, &[0, 10], 1.0, 0.5, d + 3).unwrap();
        for pair in 0..2 {
            let mut f = CMat::from_elem((d + 3, d + 3), ZERO);
            for j in 0..2 {
                let l = &sys.jump_ops()[2 * pair + j];
                f = f + dagger(l).dot(l);
            }
            // each basis carries rate γ/2
            for n in 0..=d {
                assert!((f[[n, n]] - c(0.5, 0.0)).norm() < 1e-13, "n = {n}");
            }
        }
    }

    #[test]
    fn feedback_rate_vanishes_on_target_state() {
        let d = 19;
        let sys = measurement_feedback(d, &[0, 10], 1.0, 0.5, d + 3).unwrap();
        let rho = outer(&fock_ket(d, d + 3).unwrap());
        // jump op 0 is M_{+,0} with the feedback shift
        let p = sys.gamma_banded(0).trace_product(&rho).re;
        assert!(p.abs() <= 1e-12, "p_{{+,0}} on |{d}⟩ = {p:e}");
    }

    #[test]
    fn total_rate_operator_is_gamma_identity() {
        let d = 7;
        let gamma = 2.0;
        let sys = measurement_feedback(d, &[0, 3], gamma, 0.5, d + 2).unwrap();
        let mut total = CMat::from_elem((d + 2, d + 2), ZERO);
        for l in sys.jump_ops() {
            total = total + dagger(l).dot(l);
        }
        for n in 0..=d {
            assert!((total[[n, n]] - c(gamma, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn feedback_moves_population_up() {
        let d = 5;
        let sys = measurement_feedback(d, &[0], 1.0, 0.0, d + 2).unwrap();
        let rho = outer(&fock_ket(2, d + 2).unwrap());
        let jumped =
            crate::model::apply_jump(&sys, &crate::model::ShiftVector::zero(2), 0, &rho).unwrap();
        // all post-jump weight sits on |3⟩
        let tr = trace(&jumped).re;
        assert!(tr > 0.0);
        assert!((jumped[[3, 3]].re - tr).abs() < 1e-13);
    }

    #[test]
    fn truncation_guard() {
        assert!(matches!(
            measurement_feedback(19, &[0, 10], 1.0, 0.5, 20),
            Err(Error::TruncationTooSmall { .. })
        ));
        assert!(measurement_feedback(19, &[0, 10], 1.0, 0.5, 21).is_ok());
    }
}
