//! Dense complex linear algebra primitives.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

mod banded;
mod eig;
mod expm;

pub use banded::BandedOp;
pub use eig::{hermitian_eig, psd_sqrt, HermitianEigenDecomposition};
pub use expm::expm;

/// Dense square complex matrix.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Conjugate transpose.
pub fn dagger(m: &CMat) -> CMat {
    let mut out = m.t().to_owned();
    out.mapv_inplace(|z| z.conj());
    out
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

pub fn identity(dim: usize) -> CMat {
    Array2::from_diag_elem(dim, ONE)
}

pub fn frobenius_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry magnitude.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Maximum absolute column sum (the induced 1-norm).
pub fn norm_1(m: &CMat) -> f64 {
    let mut best = 0.0f64;
    for col in m.columns() {
        best = best.max(col.iter().map(|z| z.norm()).sum());
    }
    best
}

/// Largest deviation |M - M†| over all entries.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    dev
}

/// Check the Hermiticity precondition with the default tolerance
/// `tol_scale * max_abs(M)` (an absolute floor covers the zero matrix).
pub fn require_hermitian(m: &CMat, tol_scale: f64) -> Result<()> {
    let tolerance = tol_scale * max_abs(m) + 1e-300;
    let deviation = hermiticity_deviation(m);
    if deviation > tolerance {
        return Err(Error::NotHermitian { deviation, tolerance });
    }
    Ok(())
}

pub fn require_finite(m: &CMat, context: &str) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite { context: context.to_string() });
    }
    Ok(())
}

pub fn require_same_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Entrywise comparison within an absolute tolerance.
pub fn approx_eq(a: &CMat, b: &CMat, tol: f64) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() <= tol)
}

/// Tolerance scale for Hermiticity checks.
pub const TOL_HERM: f64 = 1e-9;
/// Tolerance scale for positivity checks.
pub const TOL_PSD: f64 = 1e-8;
