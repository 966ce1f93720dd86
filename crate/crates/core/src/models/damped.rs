//! Damped harmonic oscillator at finite and zero temperature, plus the
//! closed-form zero-temperature solution for coherent superpositions.

use num_complex::Complex64 as C64;

use super::fock::{annihilation, coherent_ket, number_op, outer};
use crate::error::{Error, Result};
use crate::linalg::{dagger, CMat};
use crate::model::{OpenSystem, Structure};

/// H = ω a†a with decay L₁ = √(γ(n_th+1)) a and, for n_th > 0, heating
/// L₂ = √(γ n_th) a†. Units: ħ = 1, times in 1/γ when γ = 1.
pub fn damped_ho(omega: f64, gamma: f64, n_th: f64, fock_dim: usize) -> Result<OpenSystem> {
    if fock_dim < 2 {
        return Err(Error::InvalidModel(format!("fock_dim must be >= 2, got {fock_dim}")));
    }
    if gamma < 0.0 || n_th < 0.0 {
        return Err(Error::InvalidModel(format!("negative rate: gamma {gamma}, n_th {n_th}")));
    }
    let a = annihilation(fock_dim);
    let h = number_op(fock_dim) * C64::new(omega, 0.0);
    let mut jumps = vec![&a * C64::new((gamma * (n_th + 1.0)).sqrt(), 0.0)];
    let mut labels = vec!["decay".to_string()];
    if n_th > 0.0 {
        jumps.push(dagger(&a) * C64::new((gamma * n_th).sqrt(), 0.0));
        labels.push("heating".to_string());
    }
    OpenSystem::new(h, jumps, labels, Structure::Dense)
}

/// Parameters of the analytically solvable zero-temperature decay of a
/// two-component coherent superposition c₁|β₁⟩ + c₂|β₂⟩.
#[derive(Debug, Clone)]
pub struct CoherentSuperpositionOracle {
    pub beta1: C64,
    pub beta2: C64,
    pub c1: C64,
    pub c2: C64,
    pub gamma: f64,
    pub omega: f64,
}

impl CoherentSuperpositionOracle {
    /// Normalize the amplitudes so the t = 0 state has unit trace,
    /// accounting for the coherent-state overlap.
    pub fn normalized(beta1: C64, beta2: C64, c1: C64, c2: C64, gamma: f64, omega: f64) -> Result<Self> {
        let ov = coherent_overlap(beta1, beta2);
        let norm2 = c1.norm_sqr() + c2.norm_sqr() + 2.0 * (c1.conj() * c2 * ov).re;
        if norm2 <= 0.0 {
            return Err(Error::InvalidModel("degenerate superposition normalization".into()));
        }
        let n = norm2.sqrt();
        Ok(CoherentSuperpositionOracle {
            beta1,
            beta2,
            c1: c1 / C64::new(n, 0.0),
            c2: c2 / C64::new(n, 0.0),
            gamma,
            omega,
        })
    }

    // β(t) = β e^{(−iω − γ/2)t}; the rotation sign follows from
    // ∂ρ = −i[ωa†a, ρ] + ...
    fn beta_at(&self, beta0: C64, t: f64) -> C64 {
        beta0 * (C64::new(-0.5 * self.gamma, -self.omega) * C64::new(t, 0.0)).exp()
    }

    /// Coherence decay factor D(t) = exp[z(1 − e^{−γt})] with
    /// z = −|β₁−β₂|²/2 + i Im(β₁β₂*).
    pub fn decoherence_factor(&self, t: f64) -> C64 {
        let z = C64::new(
            -0.5 * (self.beta1 - self.beta2).norm_sqr(),
            (self.beta1 * self.beta2.conj()).im,
        );
        (z * (1.0 - (-self.gamma * t).exp())).exp()
    }
}

/// ⟨β₁|β₂⟩ = exp(−|β₁|²/2 − |β₂|²/2 + β₁*β₂).
pub fn coherent_overlap(beta1: C64, beta2: C64) -> C64 {
    (C64::new(-0.5 * (beta1.norm_sqr() + beta2.norm_sqr()), 0.0) + beta1.conj() * beta2).exp()
}

/// Exact zero-temperature state at time t in the truncated Fock basis:
/// the two coherent projectors spiral inward while the cross terms decay
/// with D(t).
pub fn zero_t_oracle(oracle: &CoherentSuperpositionOracle, t: f64, fock_dim: usize) -> Result<CMat> {
    let needed = oracle.beta1.norm().max(oracle.beta2.norm());
    let capture = needed * needed + 6.0 * needed;
    if (fock_dim as f64) < capture {
        return Err(Error::TruncationTooSmall {
            reason: format!("fock_dim {fock_dim} below the coherent capture bound {capture:.1}"),
        });
    }
    let b1 = oracle.beta_at(oracle.beta1, t);
    let b2 = oracle.beta_at(oracle.beta2, t);
    let k1 = coherent_ket(b1, fock_dim);
    let k2 = coherent_ket(b2, fock_dim);
    let d = oracle.decoherence_factor(t);

    let mut rho = outer(&k1) * C64::new(oracle.c1.norm_sqr(), 0.0);
    rho = rho + outer(&k2) * C64::new(oracle.c2.norm_sqr(), 0.0);
    let cross = oracle.c1 * oracle.c2.conj() * d;
    for a in 0..fock_dim {
        for b in 0..fock_dim {
            let x = cross * k1[a] * k2[b].conj();
            rho[[a, b]] += x;
            rho[[b, a]] += x.conj();
        }
    }
    Ok(rho)
}

/// Thermal state of the oscillator at mean occupation n_th (diagonal
/// geometric distribution), normalized on the truncated basis.
pub fn thermal_state(n_th: f64, fock_dim: usize) -> CMat {
    let ratio = n_th / (n_th + 1.0);
    let mut rho = CMat::from_elem((fock_dim, fock_dim), C64::new(0.0, 0.0));
    let mut p = 1.0;
    let mut total = 0.0;
    for n in 0..fock_dim {
        rho[[n, n]] = C64::new(p, 0.0);
        total += p;
        p *= ratio;
    }
    rho.mapv_inplace(|z| z / C64::new(total, 0.0));
    rho
}

/// Quick check that a candidate matrix is annihilated by the generator.
pub fn generator_residual(sys: &OpenSystem, rho: &CMat) -> Result<f64> {
    let out = crate::model::apply_generator(sys, rho)?;
    Ok(out.iter().map(|z| z.norm()).fold(0.0f64, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, trace};
    use crate::model::apply_generator;
    use crate::models::fock::fock_ket;

    #[test]
    fn zero_temperature_has_single_jump_op() {
        let sys = damped_ho(2.0, 1.0, 0.0, 16).unwrap();
        assert_eq!(sys.num_jumps(), 1);
        let sys_th = damped_ho(2.0, 1.0, 0.5, 16).unwrap();
        assert_eq!(sys_th.num_jumps(), 2);
    }

    #[test]
    fn two_level_truncation_gives_sigma_minus() {
        let sys = damped_ho(0.0, 1.0, 0.0, 2).unwrap();
        let l = &sys.jump_ops()[0];
        assert_eq!(l[[0, 1]], c(1.0, 0.0));
        assert_eq!(l[[1, 0]], c(0.0, 0.0));
    }

    #[test]
    fn ground_state_is_fixed_point_at_zero_t() {
        let sys = damped_ho(2.0, 1.0, 0.0, 16).unwrap();
        let rho = outer(&fock_ket(0, 16).unwrap());
        assert!(generator_residual(&sys, &rho).unwrap() < 1e-14);
    }

    #[test]
    fn thermal_state_is_fixed_point() {
        let n_th = 0.5;
        let dim = 48;
        let sys = damped_ho(2.0, 1.0, n_th, dim).unwrap();
        let rho = thermal_state(n_th, dim);
        // residual limited by the geometric tail clipped at the truncation
        let tail = (n_th / (n_th + 1.0)).powi(dim as i32);
        assert!(generator_residual(&sys, &rho).unwrap() < 1e-10 + 10.0 * tail);
    }

    #[test]
    fn oracle_initial_state_matches_superposition() {
        let oracle = CoherentSuperpositionOracle::normalized(
            c(0.0, 0.0),
            c(6.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            1.0,
            2.0,
        )
        .unwrap();
        let dim = 80;
        let rho0 = zero_t_oracle(&oracle, 0.0, dim).unwrap();
        assert!((trace(&rho0).re - 1.0).abs() < 1e-9);
        // direct construction of ψψ†
        let k1 = coherent_ket(oracle.beta1, dim);
        let k2 = coherent_ket(oracle.beta2, dim);
        let psi = &(&k1 * oracle.c1) + &(&k2 * oracle.c2);
        let direct = outer(&psi);
        let dev = (&rho0 - &direct).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        assert!(dev < 1e-12);
    }

    #[test]
    fn oracle_decoherence_factor_figure_parameters() {
        // β₁ = 0, β₂ = 6 gives z = −18.
        let oracle = CoherentSuperpositionOracle::normalized(
            c(0.0, 0.0),
            c(6.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            1.0,
            2.0,
        )
        .unwrap();
        let t = 0.7;
        let want = (-18.0 * (1.0 - (-t as f64).exp())).exp();
        assert!((oracle.decoherence_factor(t) - c(want, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn oracle_satisfies_master_equation() {
        // finite-difference time derivative of the oracle against the
        // generator applied to it
        let oracle = CoherentSuperpositionOracle::normalized(
            c(0.5, 0.2),
            c(-1.0, 0.4),
            c(0.8, 0.0),
            c(0.6, 0.1),
            1.0,
            2.0,
        )
        .unwrap();
        let dim = 24;
        let sys = damped_ho(2.0, 1.0, 0.0, dim).unwrap();
        let t = 0.4;
        let eps = 1e-5;
        let plus = zero_t_oracle(&oracle, t + eps, dim).unwrap();
        let minus = zero_t_oracle(&oracle, t - eps, dim).unwrap();
        let fd = (&plus - &minus) / c(2.0 * eps, 0.0);
        let gen = apply_generator(&sys, &zero_t_oracle(&oracle, t, dim).unwrap()).unwrap();
        let dev = (&fd - &gen).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        assert!(dev < 1e-6, "master-equation residual {dev}");
    }

    #[test]
    fn oracle_long_time_coherences_vanish() {
        let oracle = CoherentSuperpositionOracle::normalized(
            c(0.0, 0.0),
            c(6.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            1.0,
            2.0,
        )
        .unwrap();
        assert!(oracle.decoherence_factor(50.0).norm() < 1.1 * (-18.0f64).exp());
    }

    #[test]
    fn oracle_requires_adequate_truncation() {
        let oracle = CoherentSuperpositionOracle::normalized(
            c(0.0, 0.0),
            c(6.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
            1.0,
            2.0,
        )
        .unwrap();
        assert!(matches!(
            zero_t_oracle(&oracle, 0.0, 40),
            Err(Error::TruncationTooSmall { .. })
        ));
    }
}
