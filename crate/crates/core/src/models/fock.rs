//! Truncated Fock-space building blocks: ladder operators, number
//! states, coherent states.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, ZERO};

/// Annihilation operator with ⟨n|a|n+1⟩ = √(n+1).
pub fn annihilation(dim: usize) -> CMat {
    let mut a = CMat::from_elem((dim, dim), ZERO);
    for n in 0..dim.saturating_sub(1) {
        a[[n, n + 1]] = C64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    a
}

/// Number operator a†a.
pub fn number_op(dim: usize) -> CMat {
    let mut n_op = CMat::from_elem((dim, dim), ZERO);
    for n in 0..dim {
        n_op[[n, n]] = C64::new(n as f64, 0.0);
    }
    n_op
}

/// |n⟩ in the truncated basis.
pub fn fock_ket(n: usize, dim: usize) -> Result<CVec> {
    if n >= dim {
        return Err(Error::IndexOutOfRange { index: n, count: dim });
    }
    let mut v = CVec::from_elem(dim, ZERO);
    v[n] = C64::new(1.0, 0.0);
    Ok(v)
}

/// Coherent state |β⟩ with amplitudes e^{−|β|²/2} βⁿ/√(n!), built by the
/// stable recursion c_{n+1} = c_n β/√(n+1). Not re-normalized, so the
/// truncation error shows up as a norm deficit.
pub fn coherent_ket(beta: C64, dim: usize) -> CVec {
    let mut v = CVec::from_elem(dim, ZERO);
    let mut c = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        v[n] = c;
        c *= beta / C64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    v
}

/// Reject states whose top two Fock levels carry more than `tol` of the
/// population; such states are visibly clipped by the truncation.
pub fn check_truncation(psi: &CVec, tol: f64) -> Result<()> {
    let dim = psi.len();
    if dim < 2 {
        return Err(Error::TruncationTooSmall { reason: "basis dimension below 2".into() });
    }
    let top = psi[dim - 1].norm_sqr() + psi[dim - 2].norm_sqr();
    let total: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if top > tol * total.max(1e-300) {
        return Err(Error::TruncationTooSmall {
            reason: format!(
                "top two Fock levels hold {:.3e} of the population (limit {:.1e})",
                top / total,
                tol
            ),
        });
    }
    Ok(())
}

/// ψψ† for a pure state vector.
pub fn outer(psi: &CVec) -> CMat {
    let dim = psi.len();
    let mut rho = CMat::from_elem((dim, dim), ZERO);
    for a in 0..dim {
        for b in 0..dim {
            rho[[a, b]] = psi[a] * psi[b].conj();
        }
    }
    rho
}
