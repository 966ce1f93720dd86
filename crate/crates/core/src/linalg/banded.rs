//! Sparse operator storage by nonzero diagonals.
//!
//! Ladder-type operators and their products touch only a handful of
//! diagonals, so matvecs and trace contractions run in O(dim * ndiags)
//! instead of O(dim^2).

use num_complex::Complex64 as C64;

use super::{CMat, CVec, ZERO};

/// Operator stored as its nonzero diagonals.
///
/// `offsets[k]` is the column-minus-row offset of diagonal `k`;
/// `diags[k][i]` is the entry at `(i, i + offset)` for valid `i`.
/// Offsets are strictly increasing.
#[derive(Debug, Clone)]
pub struct BandedOp {
    dim: usize,
    offsets: Vec<i64>,
    diags: Vec<Vec<C64>>,
}

impl BandedOp {
    /// Extract the nonzero diagonals of a dense matrix. Diagonals whose
    /// largest entry is below `drop_tol` are dropped entirely.
    pub fn from_dense(m: &CMat, drop_tol: f64) -> Self {
        let dim = m.nrows();
        let mut offsets = Vec::new();
        let mut diags = Vec::new();
        for offset in -(dim as i64 - 1)..=(dim as i64 - 1) {
            let len = dim - offset.unsigned_abs() as usize;
            let mut diag = Vec::with_capacity(len);
            let mut peak = 0.0f64;
            for i in 0..len {
                let (r, c) = if offset >= 0 {
                    (i, i + offset as usize)
                } else {
                    (i + (-offset) as usize, i)
                };
                let z = m[[r, c]];
                peak = peak.max(z.norm());
                diag.push(z);
            }
            if peak > drop_tol {
                offsets.push(offset);
                diags.push(diag);
            }
        }
        BandedOp { dim, offsets, diags }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_diagonals(&self) -> usize {
        self.offsets.len()
    }

    pub fn to_dense(&self) -> CMat {
        let mut out = CMat::from_elem((self.dim, self.dim), ZERO);
        for (k, &offset) in self.offsets.iter().enumerate() {
            for (i, &z) in self.diags[k].iter().enumerate() {
                let (r, c) = rc(i, offset);
                out[[r, c]] = z;
            }
        }
        out
    }

    /// `out += coeff * B x`.
    pub fn accumulate_matvec(&self, coeff: C64, x: &CVec, out: &mut CVec) {
        let xs = x.as_slice().expect("contiguous vector");
        let os = out.as_slice_mut().expect("contiguous vector");
        for (k, &offset) in self.offsets.iter().enumerate() {
            let diag = &self.diags[k];
            if offset >= 0 {
                let shift = offset as usize;
                for i in 0..diag.len() {
                    os[i] += coeff * diag[i] * xs[i + shift];
                }
            } else {
                let shift = (-offset) as usize;
                for i in 0..diag.len() {
                    os[i + shift] += coeff * diag[i] * xs[i];
                }
            }
        }
    }

    pub fn matvec(&self, x: &CVec) -> CVec {
        let mut out = CVec::from_elem(self.dim, ZERO);
        self.accumulate_matvec(C64::new(1.0, 0.0), x, &mut out);
        out
    }

    /// `<x| B |x>` without normalization.
    pub fn expectation(&self, x: &CVec) -> C64 {
        let xs = x.as_slice().expect("contiguous vector");
        let mut acc = ZERO;
        for (k, &offset) in self.offsets.iter().enumerate() {
            let diag = &self.diags[k];
            if offset >= 0 {
                let shift = offset as usize;
                for i in 0..diag.len() {
                    acc += xs[i].conj() * diag[i] * xs[i + shift];
                }
            } else {
                let shift = (-offset) as usize;
                for i in 0..diag.len() {
                    acc += xs[i + shift].conj() * diag[i] * xs[i];
                }
            }
        }
        acc
    }

    /// `out += coeff * B M` (apply from the left to a dense matrix).
    pub fn accumulate_matmat_left(&self, coeff: C64, m: &CMat, out: &mut CMat) {
        let n = self.dim;
        for (k, &offset) in self.offsets.iter().enumerate() {
            let diag = &self.diags[k];
            for (i, &z) in diag.iter().enumerate() {
                let (r, c) = rc(i, offset);
                let w = coeff * z;
                for j in 0..n {
                    out[[r, j]] += w * m[[c, j]];
                }
            }
        }
    }

    /// `out += coeff * M B` (apply from the right to a dense matrix).
    pub fn accumulate_matmat_right(&self, coeff: C64, m: &CMat, out: &mut CMat) {
        let n = self.dim;
        for (k, &offset) in self.offsets.iter().enumerate() {
            let diag = &self.diags[k];
            for (i, &z) in diag.iter().enumerate() {
                let (r, c) = rc(i, offset);
                let w = coeff * z;
                for j in 0..n {
                    out[[j, c]] += m[[j, r]] * w;
                }
            }
        }
    }

    /// `Tr[B M]` without forming the product.
    pub fn trace_product(&self, m: &CMat) -> C64 {
        let mut acc = ZERO;
        for (k, &offset) in self.offsets.iter().enumerate() {
            for (i, &z) in self.diags[k].iter().enumerate() {
                let (r, c) = rc(i, offset);
                acc += z * m[[c, r]];
            }
        }
        acc
    }

    /// Conjugate transpose, still banded.
    pub fn dagger(&self) -> BandedOp {
        let mut offsets: Vec<i64> = self.offsets.iter().map(|&o| -o).collect();
        let mut diags: Vec<Vec<C64>> = self
            .diags
            .iter()
            .map(|d| d.iter().map(|z| z.conj()).collect())
            .collect();
        // keep offsets strictly increasing
        let mut order: Vec<usize> = (0..offsets.len()).collect();
        order.sort_by_key(|&k| offsets[k]);
        offsets = order.iter().map(|&k| offsets[k]).collect();
        diags = order.iter().map(|&k| std::mem::take(&mut diags[k])).collect();
        BandedOp { dim: self.dim, offsets, diags }
    }
}

fn rc(i: usize, offset: i64) -> (usize, usize) {
    if offset >= 0 {
        (i, i + offset as usize)
    } else {
        (i + (-offset) as usize, i)
    }
}
