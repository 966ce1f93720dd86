//! Hermitian eigendecomposition via the system LAPACK (`zheev`).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use std::os::raw::c_char;

use super::{dagger, max_abs, require_hermitian, CMat, TOL_HERM, TOL_PSD};
use crate::error::{Error, Result};

extern "C" {
    fn zheev_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut f64,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        info: *mut i32,
    );
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are ascending; `eigenvectors` holds the corresponding
/// eigenvectors as columns, so `V diag(w) V† = M`.
#[derive(Debug, Clone)]
pub struct HermitianEigenDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: CMat,
}

impl HermitianEigenDecomposition {
    /// Rebuild `V diag(w) V†`.
    pub fn reconstruct(&self) -> CMat {
        let scaled = &self.eigenvectors * &self.eigenvalues.mapv(|x| C64::new(x, 0.0));
        scaled.dot(&dagger(&self.eigenvectors))
    }

    /// Apply a real function to the spectrum: `V diag(f(w)) V†`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> CMat {
        let scaled = &self.eigenvectors * &self.eigenvalues.mapv(|x| C64::new(f(x), 0.0));
        scaled.dot(&dagger(&self.eigenvectors))
    }
}

/// Raw `zheev` call on an already-validated Hermitian matrix.
///
/// The row-major buffer of a Hermitian `M` doubles as the column-major
/// buffer of `conj(M)`, whose eigenvectors are the conjugates of those
/// of `M`.
fn zheev(m: &CMat) -> Result<HermitianEigenDecomposition> {
    let n = m.nrows() as i32;
    let mut a: Vec<C64> = m.iter().copied().collect();
    let mut w = vec![0.0f64; n as usize];
    let mut rwork = vec![0.0f64; (3 * n.max(1) - 2).max(1) as usize];
    let mut info = 0i32;

    // workspace query
    let mut work_query = [C64::new(0.0, 0.0)];
    let query = -1i32;
    unsafe {
        zheev_(
            b"V".as_ptr() as *const c_char,
            b"L".as_ptr() as *const c_char,
            &n,
            a.as_mut_ptr(),
            &n,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &query,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheev (workspace query)", info });
    }
    let lwork = (work_query[0].re as i32).max(2 * n - 1).max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    unsafe {
        zheev_(
            b"V".as_ptr() as *const c_char,
            b"L".as_ptr() as *const c_char,
            &n,
            a.as_mut_ptr(),
            &n,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "zheev", info });
    }

    let dim = n as usize;
    let mut vecs = Array2::from_elem((dim, dim), C64::new(0.0, 0.0));
    for j in 0..dim {
        for i in 0..dim {
            // column-major output, conjugated back to eigenvectors of M
            vecs[[i, j]] = a[j * dim + i].conj();
        }
    }
    Ok(HermitianEigenDecomposition {
        eigenvalues: Array1::from_vec(w),
        eigenvectors: vecs,
    })
}

/// Eigendecomposition of a Hermitian matrix, ascending eigenvalues.
pub fn hermitian_eig(m: &CMat) -> Result<HermitianEigenDecomposition> {
    super::require_finite(m, "hermitian_eig input")?;
    require_hermitian(m, TOL_HERM)?;
    zheev(m)
}

/// Hermitian square root of a positive semidefinite matrix.
///
/// Eigenvalues within `-TOL_PSD * max_abs(M)` of zero are clamped to zero;
/// anything more negative is rejected.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let eig = hermitian_eig(m)?;
    let tolerance = TOL_PSD * max_abs(m) + 1e-300;
    if let Some(&lo) = eig
        .eigenvalues
        .iter()
        .find(|&&x| x < -tolerance)
    {
        return Err(Error::NotPositive { eigenvalue: lo, tolerance });
    }
    Ok(eig.map_spectrum(|x| x.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{approx_eq, c, identity};
    use ndarray::array;

    #[test]
    fn identity_eigenvalues() {
        let eig = hermitian_eig(&identity(2)).unwrap();
        assert!((eig.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pauli_z_eigenvalues_ascending() {
        let m = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let eig = hermitian_eig(&m).unwrap();
        assert!((eig.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_hermitian_roundtrip() {
        // fixed pseudo-random Hermitian dim 8
        let dim = 8;
        let mut m = Array2::from_elem((dim, dim), c(0.0, 0.0));
        let mut state = 0x12345678u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..dim {
            for j in 0..dim {
                m[[i, j]] = c(next(), next());
            }
        }
        let h = (&m + &dagger(&m)) * c(0.5, 0.0);
        let eig = hermitian_eig(&h).unwrap();
        assert!(approx_eq(&eig.reconstruct(), &h, 1e-12));
        // unitarity of V
        let vtv = dagger(&eig.eigenvectors).dot(&eig.eigenvectors);
        assert!(approx_eq(&vtv, &identity(dim), 1e-12));
        // ascending order
        for k in 1..dim {
            assert!(eig.eigenvalues[k] >= eig.eigenvalues[k - 1]);
        }
    }

    #[test]
    fn psd_sqrt_diagonal() {
        let m = array![[c(4.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(9.0, 0.0)]];
        let s = psd_sqrt(&m).unwrap();
        assert!((s[[0, 0]] - c(2.0, 0.0)).norm() < 1e-13);
        assert!((s[[1, 1]] - c(3.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn psd_sqrt_identity() {
        let s = psd_sqrt(&identity(3)).unwrap();
        assert!(approx_eq(&s, &identity(3), 1e-13));
    }

    #[test]
    fn psd_sqrt_rejects_negative() {
        let m = array![[c(-1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]];
        assert!(matches!(psd_sqrt(&m), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn psd_sqrt_random_psd_roundtrip() {
        let dim = 6;
        let mut b = Array2::from_elem((dim, dim), c(0.0, 0.0));
        let mut state = 0xabcdefu64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..dim {
            for j in 0..dim {
                b[[i, j]] = c(next(), next());
            }
        }
        let a = dagger(&b).dot(&b);
        let s = psd_sqrt(&a).unwrap();
        assert!(approx_eq(&s.dot(&s), &a, 1e-10));
        // output Hermitian
        assert!(crate::linalg::hermiticity_deviation(&s) < 1e-12);
    }
}
