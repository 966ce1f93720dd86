//! Open-system model layer: the Lindblad generator, its shifted
//! decompositions, and the jump-rate algebra.
//!
//! The generator ∂ρ = −i[H,ρ] + Σ_j (L_jρL_j† − ½{L_j†L_j,ρ}) is invariant
//! under L_j → L_j + α_j, H → H − (i/2)Σ_j(α_j*L_j − α_jL_j†) for any
//! complex vector α. Everything downstream (branch evolution, rates,
//! adaptive resummation) is phrased through that shift freedom.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, identity, max_abs, require_finite, require_hermitian, require_same_dim, trace,
    BandedOp, CMat, CVec, I, TOL_HERM, ZERO,
};

/// Branch weights at or below this are treated as dead rather than used
/// as denominators.
pub const EPS_TRACE: f64 = 1e-14;

/// Uniform 1D grid shared by the spatial models. Position values are
/// cell-centered on [-extent/2, extent/2); momenta follow FFT ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub points: usize,
    pub extent: f64,
}

impl Grid {
    pub fn new(points: usize, extent: f64) -> Result<Self> {
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::InvalidModel(format!(
                "grid points must be a power of two >= 2, got {points}"
            )));
        }
        if !(extent > 0.0) {
            return Err(Error::InvalidModel(format!("grid extent must be positive, got {extent}")));
        }
        Ok(Grid { points, extent })
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.points as f64
    }

    pub fn dk(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.extent
    }

    /// Position samples, symmetric about 0 (half-integer offsets, so the
    /// grid carries no unpaired endpoint and position sums are odd-exact).
    pub fn positions(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.points)
            .map(|i| (i as f64 - (self.points as f64 - 1.0) / 2.0) * dx)
            .collect()
    }

    /// Momentum samples in FFT order (0, dk, ..., -dk).
    pub fn momenta(&self) -> Vec<f64> {
        let dk = self.dk();
        let n = self.points as i64;
        (0..n)
            .map(|i| {
                let idx = if i < n - n / 2 { i } else { i - n };
                idx as f64 * dk
            })
            .collect()
    }
}

/// Structure tag telling integrators which fast path applies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Structure {
    /// No exploitable structure beyond bandedness of the operators.
    Dense,
    /// 1D spatial model: H is a function of momentum alone, every jump
    /// operator is diagonal in position.
    Spatial(SpatialInfo),
}

/// Fast-path data for spatial models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialInfo {
    pub grid: Grid,
    /// Kinetic energies on the FFT-ordered momentum grid.
    pub kinetic_k: Vec<f64>,
    /// Position-basis diagonal of each jump operator, same order as
    /// `jump_ops`.
    pub jump_diags: Vec<Vec<C64>>,
}

/// A Markovian open system: Hermitian Hamiltonian plus a non-empty
/// ordered list of jump operators, all sharing one dimension.
///
/// Immutable after construction; derived operator forms are precomputed
/// here so concurrent readers share them.
#[derive(Debug, Clone)]
pub struct OpenSystem {
    dim: usize,
    hamiltonian: CMat,
    jump_ops: Vec<CMat>,
    labels: Vec<String>,
    structure: Structure,
    // precomputed
    jumps_banded: Vec<BandedOp>,
    gammas_banded: Vec<BandedOp>, // L_j† L_j
    heff0: CMat,                  // H − (i/2) Σ L†L
    heff0_banded: BandedOp,
    /// Diagonal of heff0 when heff0 is exactly diagonal in storage.
    heff0_diag: Option<CVec>,
    traces_l: Vec<C64>,
}

impl OpenSystem {
    pub fn new(
        hamiltonian: CMat,
        jump_ops: Vec<CMat>,
        labels: Vec<String>,
        structure: Structure,
    ) -> Result<Self> {
        let dim = hamiltonian.nrows();
        if hamiltonian.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: hamiltonian.ncols() });
        }
        if jump_ops.is_empty() {
            return Err(Error::InvalidModel("at least one jump operator required".into()));
        }
        if labels.len() != jump_ops.len() {
            return Err(Error::DimensionMismatch { expected: jump_ops.len(), got: labels.len() });
        }
        require_hermitian(&hamiltonian, TOL_HERM)?;
        require_finite(&hamiltonian, "hamiltonian")?;
        for l in &jump_ops {
            require_same_dim(dim, l.nrows())?;
            require_same_dim(dim, l.ncols())?;
            require_finite(l, "jump operator")?;
        }
        if let Structure::Spatial(info) = &structure {
            if info.grid.points != dim
                || info.kinetic_k.len() != dim
                || info.jump_diags.len() != jump_ops.len()
                || info.jump_diags.iter().any(|d| d.len() != dim)
            {
                return Err(Error::InvalidModel("spatial structure sizes inconsistent".into()));
            }
        }

        let drop_tol = 0.0;
        let jumps_banded: Vec<BandedOp> =
            jump_ops.iter().map(|l| BandedOp::from_dense(l, drop_tol)).collect();
        let mut heff0 = hamiltonian.clone();
        let mut gammas_banded = Vec::with_capacity(jump_ops.len());
        for l in &jump_ops {
            let gamma = dagger(l).dot(l);
            heff0 = heff0 - &gamma * (I * 0.5);
            gammas_banded.push(BandedOp::from_dense(&gamma, drop_tol));
        }
        let heff0_banded = BandedOp::from_dense(&heff0, drop_tol);
        let mut off_diag = 0.0f64;
        for ((r, c), z) in heff0.indexed_iter() {
            if r != c {
                off_diag = off_diag.max(z.norm());
            }
        }
        let heff0_diag = if off_diag == 0.0 { Some(heff0.diag().to_owned()) } else { None };
        let traces_l = jump_ops.iter().map(trace).collect();

        Ok(OpenSystem {
            dim,
            hamiltonian,
            jump_ops,
            labels,
            structure,
            jumps_banded,
            gammas_banded,
            heff0,
            heff0_banded,
            heff0_diag,
            traces_l,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMat {
        &self.hamiltonian
    }

    pub fn jump_ops(&self) -> &[CMat] {
        &self.jump_ops
    }

    pub fn jump(&self, j: usize) -> Result<&CMat> {
        self.jump_ops.get(j).ok_or(Error::IndexOutOfRange { index: j, count: self.num_jumps() })
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_ops.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// Banded form of L_j.
    pub fn jump_banded(&self, j: usize) -> &BandedOp {
        &self.jumps_banded[j]
    }

    /// Banded form of L_j†L_j.
    pub fn gamma_banded(&self, j: usize) -> &BandedOp {
        &self.gammas_banded[j]
    }

    /// H − (i/2) Σ_j L_j†L_j, the unshifted effective Hamiltonian.
    pub fn heff0(&self) -> &CMat {
        &self.heff0
    }

    pub fn heff0_banded(&self) -> &BandedOp {
        &self.heff0_banded
    }

    /// Diagonal of the unshifted effective Hamiltonian, when it is
    /// exactly diagonal (true for ladder-operator models with H = ωa†a).
    pub fn heff0_diag(&self) -> Option<&CVec> {
        self.heff0_diag.as_ref()
    }

    pub fn trace_l(&self, j: usize) -> C64 {
        self.traces_l[j]
    }

    pub fn spatial(&self) -> Option<&SpatialInfo> {
        match &self.structure {
            Structure::Spatial(info) => Some(info),
            Structure::Dense => None,
        }
    }
}

/// Complex shift vector α, one entry per jump operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftVector {
    pub alphas: Vec<C64>,
}

impl ShiftVector {
    pub fn new(alphas: Vec<C64>) -> Self {
        ShiftVector { alphas }
    }

    pub fn zero(n: usize) -> Self {
        ShiftVector { alphas: vec![ZERO; n] }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.alphas.iter().all(|a| *a == ZERO)
    }

    pub fn check_len(&self, sys: &OpenSystem) -> Result<()> {
        require_same_dim(sys.num_jumps(), self.len())
    }
}

impl std::ops::Index<usize> for ShiftVector {
    type Output = C64;
    fn index(&self, j: usize) -> &C64 {
        &self.alphas[j]
    }
}

/// Non-Hermitian generator of the continuous part of branch evolution,
/// H_α − (i/2) Σ_j (L_j+α_j)†(L_j+α_j).
#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub matrix: CMat,
}

/// Full Lindblad right-hand side −i[H,ρ] + Σ_j (L_jρL_j† − ½{L_j†L_j,ρ}).
pub fn apply_generator(sys: &OpenSystem, rho: &CMat) -> Result<CMat> {
    require_same_dim(sys.dim(), rho.nrows())?;
    require_same_dim(sys.dim(), rho.ncols())?;
    let h = sys.hamiltonian();
    let mut out = h.dot(rho) * (-I);
    out = out + rho.dot(h) * I;
    for l in sys.jump_ops() {
        let ld = dagger(l);
        let gamma = ld.dot(l);
        out = out + l.dot(rho).dot(&ld);
        out = out - gamma.dot(rho) * C64::new(0.5, 0.0);
        out = out - rho.dot(&gamma) * C64::new(0.5, 0.0);
    }
    Ok(out)
}

/// L_j + α_j·𝟙.
pub fn shifted_jump(sys: &OpenSystem, alpha: &ShiftVector, j: usize) -> Result<CMat> {
    alpha.check_len(sys)?;
    let l = sys.jump(j)?;
    Ok(l + &(identity(sys.dim()) * alpha[j]))
}

/// H − (i/2) Σ_j (α_j* L_j − α_j L_j†); Hermitian for any α.
pub fn shifted_hamiltonian(sys: &OpenSystem, alpha: &ShiftVector) -> Result<CMat> {
    alpha.check_len(sys)?;
    let mut h = sys.hamiltonian().clone();
    for (j, l) in sys.jump_ops().iter().enumerate() {
        let a = alpha[j];
        if a == ZERO {
            continue;
        }
        h = h - l * (I * 0.5 * a.conj());
        h = h + dagger(l) * (I * 0.5 * a);
    }
    Ok(h)
}

/// Effective Hamiltonian at shift α.
///
/// Assembled from the unshifted one through the exact identity
/// H_eff(α) = H_eff(0) − i Σ_j α_j* L_j − (i/2) Σ_j |α_j|², which avoids
/// rebuilding the L†L products.
pub fn effective_hamiltonian(sys: &OpenSystem, alpha: &ShiftVector) -> Result<EffectiveHamiltonian> {
    alpha.check_len(sys)?;
    let mut m = sys.heff0().clone();
    let mut norm2 = 0.0f64;
    for (j, l) in sys.jump_ops().iter().enumerate() {
        let a = alpha[j];
        norm2 += a.norm_sqr();
        if a == ZERO {
            continue;
        }
        m = m + l * (-I * a.conj());
    }
    if norm2 != 0.0 {
        m = m + identity(sys.dim()) * (-I * 0.5 * norm2);
    }
    Ok(EffectiveHamiltonian { matrix: m })
}

/// One jump superoperator term: (L_j+α_j) ρ (L_j+α_j)†.
pub fn apply_jump(sys: &OpenSystem, alpha: &ShiftVector, j: usize, rho: &CMat) -> Result<CMat> {
    require_same_dim(sys.dim(), rho.nrows())?;
    let l = shifted_jump(sys, alpha, j)?;
    Ok(l.dot(rho).dot(&dagger(&l)))
}

/// Continuous (jump-free) part: −i(H_eff ρ − ρ H_eff†).
pub fn apply_deterministic(sys: &OpenSystem, alpha: &ShiftVector, rho: &CMat) -> Result<CMat> {
    require_same_dim(sys.dim(), rho.nrows())?;
    let heff = effective_hamiltonian(sys, alpha)?.matrix;
    Ok((heff.dot(rho) - rho.dot(&dagger(&heff))) * (-I))
}

/// Tr[(L_j+α_j)†(L_j+α_j) ρ], evaluated without forming the shifted
/// product: Tr[L†Lρ] + |α|² Trρ + 2 Re(α* Tr[Lρ]).
pub fn partial_jump_rate(sys: &OpenSystem, alpha: &ShiftVector, j: usize, rho: &CMat) -> Result<f64> {
    alpha.check_len(sys)?;
    require_same_dim(sys.dim(), rho.nrows())?;
    if j >= sys.num_jumps() {
        return Err(Error::IndexOutOfRange { index: j, count: sys.num_jumps() });
    }
    let a = alpha[j];
    let tr_gamma = sys.gamma_banded(j).trace_product(rho);
    let tr_rho = trace(rho);
    let tr_l = sys.jump_banded(j).trace_product(rho);
    Ok(tr_gamma.re + a.norm_sqr() * tr_rho.re + 2.0 * (a.conj() * tr_l).re)
}

/// The rate-minimizing shift −Tr[L_j ρ]/Tr ρ.
pub fn optimal_shift(sys: &OpenSystem, j: usize, rho: &CMat) -> Result<C64> {
    require_same_dim(sys.dim(), rho.nrows())?;
    if j >= sys.num_jumps() {
        return Err(Error::IndexOutOfRange { index: j, count: sys.num_jumps() });
    }
    let tr_rho = trace(rho).re;
    if tr_rho <= EPS_TRACE {
        return Err(Error::VanishingWeight { trace: tr_rho, cutoff: EPS_TRACE });
    }
    Ok(-sys.jump_banded(j).trace_product(rho) / C64::new(tr_rho, 0.0))
}

/// All optimal shifts at once.
pub fn optimal_shift_vector(sys: &OpenSystem, rho: &CMat) -> Result<ShiftVector> {
    let alphas = (0..sys.num_jumps())
        .map(|j| optimal_shift(sys, j, rho))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShiftVector::new(alphas))
}

/// The jump rate at the optimal shift, Tr[L†Lρ] − |Tr[Lρ]|²/Trρ.
pub fn minimal_rate(sys: &OpenSystem, j: usize, rho: &CMat) -> Result<f64> {
    require_same_dim(sys.dim(), rho.nrows())?;
    if j >= sys.num_jumps() {
        return Err(Error::IndexOutOfRange { index: j, count: sys.num_jumps() });
    }
    let tr_rho = trace(rho).re;
    if tr_rho <= EPS_TRACE {
        return Err(Error::VanishingWeight { trace: tr_rho, cutoff: EPS_TRACE });
    }
    let tr_gamma = sys.gamma_banded(j).trace_product(rho).re;
    let tr_l = sys.jump_banded(j).trace_product(rho);
    Ok(tr_gamma - tr_l.norm_sqr() / tr_rho)
}

// --- serialization ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl MatrixDoc {
    fn from_mat(m: &CMat) -> Self {
        MatrixDoc {
            rows: m.nrows(),
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
    }

    fn to_mat(&self) -> Result<CMat> {
        if self.re.len() != self.rows * self.rows || self.im.len() != self.re.len() {
            return Err(Error::Serialization("matrix entry count mismatch".into()));
        }
        let data: Vec<C64> =
            self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)).collect();
        Array2::from_shape_vec((self.rows, self.rows), data)
            .map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct SystemDoc {
    dim: usize,
    labels: Vec<String>,
    hamiltonian: MatrixDoc,
    jump_ops: Vec<MatrixDoc>,
    structure: Structure,
}

impl OpenSystem {
    /// Structured text dump; round-trips bit-exactly at double precision.
    pub fn to_json(&self) -> Result<String> {
        let doc = SystemDoc {
            dim: self.dim,
            labels: self.labels.clone(),
            hamiltonian: MatrixDoc::from_mat(&self.hamiltonian),
            jump_ops: self.jump_ops.iter().map(MatrixDoc::from_mat).collect(),
            structure: self.structure.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SystemDoc =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        let h = doc.hamiltonian.to_mat()?;
        let jumps = doc.jump_ops.iter().map(|m| m.to_mat()).collect::<Result<Vec<_>>>()?;
        let sys = OpenSystem::new(h, jumps, doc.labels, doc.structure)?;
        require_same_dim(doc.dim, sys.dim())?;
        Ok(sys)
    }
}

/// Scale-aware near-zero check used by model tests.
pub fn relative_max_abs(m: &CMat, reference: &CMat) -> f64 {
    max_abs(m) / max_abs(reference).max(1e-300)
}
