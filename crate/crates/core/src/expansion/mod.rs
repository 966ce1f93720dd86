//! Record-conditioned branch evolution under a resummation strategy.
//!
//! A branch is the unnormalized physical state conditioned on one jump
//! record. Between jumps it evolves under the non-Hermitian effective
//! Hamiltonian of the current shift; at a jump the shifted jump operator
//! is applied and the record grows by one event. The shift policy is the
//! only thing distinguishing the strategies:
//!
//! - `NoShift`: α = 0 throughout.
//! - `Fixed`: a constant user-supplied α.
//! - `Optimal`: α re-evaluated from the branch state at every integrator
//!   step, minimizing every partial jump rate.
//! - `PiecewiseConstant`: the optimal α of the state at the last jump,
//!   held constant until the next one.
//! - `IndexConditioned`: α determined by the jump index sequence alone,
//!   via a deterministic recursion started from the maximally mixed state.
//! - `PerOrder`: α(t, n) read off a precomputed time-gridded estimate of
//!   the n-jump term, shared by all branches of that order.

mod shifts;

pub use shifts::{index_conditioned_shift, per_order_shift, IndexShiftTables, PerOrderGrid};

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{trace, CMat, CVec, I, ZERO};
use crate::model::{OpenSystem, ShiftVector, SpatialInfo, EPS_TRACE};

/// Relative weight growth over one evolution segment that aborts the
/// integration; branch weights are non-increasing in exact arithmetic.
const MAX_WEIGHT_GROWTH: f64 = 1e-6;

/// Branch-death cutoff. Unresummed expansions of strongly decohering
/// systems carry physically meaningful branches with weights far below
/// any fixed statistical scale (the renormalized partial sums divide
/// the common smallness back out), so death only guards against
/// floating-point underflow. Shift computations use the much larger
/// `EPS_TRACE` before dividing by a branch trace.
const DEAD_WEIGHT: f64 = 1e-280;

/// Ordered list of (jump index, jump time) events identifying a branch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpRecord {
    pub events: Vec<(usize, f64)>,
}

impl JumpRecord {
    pub fn new() -> Self {
        JumpRecord { events: Vec::new() }
    }

    pub fn from_events(events: Vec<(usize, f64)>) -> Result<Self> {
        let mut r = JumpRecord::new();
        for (j, t) in events {
            r.push(j, t)?;
        }
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Append an event; times must be non-decreasing (coincident times
    /// are tolerated for file input and applied in list order).
    pub fn push(&mut self, j: usize, t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::NonFinite { context: format!("jump time {t}") });
        }
        if let Some(&(_, last)) = self.events.last() {
            if t < last {
                return Err(Error::InvalidModel(format!(
                    "jump time {t} precedes previous event at {last}"
                )));
            }
        }
        self.events.push((j, t));
        Ok(())
    }

    pub fn validate(&self, sys: &OpenSystem) -> Result<()> {
        for &(j, _) in &self.events {
            if j >= sys.num_jumps() {
                return Err(Error::IndexOutOfRange { index: j, count: sys.num_jumps() });
            }
        }
        Ok(())
    }

    /// One "j t" line per event; floats print in shortest round-trip
    /// form, so replay reproduces the record bit-identically.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for &(j, t) in &self.events {
            out.push_str(&format!("{j} {t}\n"));
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let mut rec = JumpRecord::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let j: usize = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Serialization(format!("bad record line: {line}")))?;
            let t: f64 = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Serialization(format!("bad record line: {line}")))?;
            rec.push(j, t)?;
        }
        Ok(rec)
    }
}

/// Branch state, kept as a ket whenever the initial condition allows:
/// both the continuous evolution and the jumps preserve rank, so a pure
/// start stays pure and costs O(dim) instead of O(dim²) per operation.
#[derive(Debug, Clone)]
pub enum BranchState {
    Pure(CVec),
    Mixed(CMat),
}

impl BranchState {
    pub fn dim(&self) -> usize {
        match self {
            BranchState::Pure(v) => v.len(),
            BranchState::Mixed(m) => m.nrows(),
        }
    }

    /// Unnormalized weight: ⟨ψ|ψ⟩ or Tr ρ.
    pub fn weight(&self) -> f64 {
        match self {
            BranchState::Pure(v) => v.iter().map(|z| z.norm_sqr()).sum(),
            BranchState::Mixed(m) => trace(m).re,
        }
    }

    /// Materialize the density matrix.
    pub fn density(&self) -> CMat {
        match self {
            BranchState::Pure(v) => {
                let n = v.len();
                let mut out = CMat::from_elem((n, n), ZERO);
                for a in 0..n {
                    for b in 0..n {
                        out[[a, b]] = v[a] * v[b].conj();
                    }
                }
                out
            }
            BranchState::Mixed(m) => m.clone(),
        }
    }

    /// Accumulate `coeff`·ρ into `out` without an intermediate allocation.
    pub fn accumulate_density(&self, coeff: f64, out: &mut CMat) {
        let c = C64::new(coeff, 0.0);
        match self {
            BranchState::Pure(v) => {
                let n = v.len();
                for a in 0..n {
                    let va = v[a] * c;
                    for b in 0..n {
                        out[[a, b]] += va * v[b].conj();
                    }
                }
            }
            BranchState::Mixed(m) => {
                out.zip_mut_with(m, |o, &z| *o += z * c);
            }
        }
    }

    /// Tr[L_j ρ] for this (unnormalized) state.
    pub fn trace_l(&self, sys: &OpenSystem, j: usize) -> C64 {
        match self {
            BranchState::Pure(v) => sys.jump_banded(j).expectation(v),
            BranchState::Mixed(m) => sys.jump_banded(j).trace_product(m),
        }
    }

    /// The rate-minimizing shift vector −Tr[L_j ρ]/Tr ρ.
    pub fn optimal_shift(&self, sys: &OpenSystem) -> Result<ShiftVector> {
        let w = self.weight();
        if w <= EPS_TRACE {
            return Err(Error::VanishingWeight { trace: w, cutoff: EPS_TRACE });
        }
        let inv = C64::new(1.0 / w, 0.0);
        Ok(ShiftVector::new(
            (0..sys.num_jumps()).map(|j| -self.trace_l(sys, j) * inv).collect(),
        ))
    }

    fn zero_out(&mut self) {
        match self {
            BranchState::Pure(v) => v.fill(ZERO),
            BranchState::Mixed(m) => m.fill(ZERO),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            BranchState::Pure(v) => v.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            BranchState::Mixed(m) => m.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }
}

/// One record-conditioned branch: unnormalized state, its record, the
/// shift currently in force, and the time it has been evolved to.
#[derive(Debug, Clone)]
pub struct Branch {
    pub state: BranchState,
    pub record: JumpRecord,
    pub current_shift: ShiftVector,
    pub current_time: f64,
    /// Set once the weight drops below the trace cutoff; the state is
    /// zeroed so the branch contributes exactly nothing downstream.
    pub dead: bool,
}

impl Branch {
    pub fn new(sys: &OpenSystem, strategy: &ResummationStrategy, state: BranchState) -> Result<Self> {
        if state.dim() != sys.dim() {
            return Err(Error::DimensionMismatch { expected: sys.dim(), got: state.dim() });
        }
        let mut b = Branch {
            state,
            record: JumpRecord::new(),
            current_shift: ShiftVector::zero(sys.num_jumps()),
            current_time: 0.0,
            dead: false,
        };
        b.refresh_dead();
        if !b.dead {
            b.current_shift = strategy.initial_shift(sys, &b.state)?;
        }
        Ok(b)
    }

    pub fn weight(&self) -> f64 {
        if self.dead {
            0.0
        } else {
            self.state.weight()
        }
    }

    fn refresh_dead(&mut self) {
        if !self.dead && self.state.weight() < DEAD_WEIGHT {
            self.state.zero_out();
            self.dead = true;
        }
    }
}

/// Precomputed per-order shift grid plus the strategy selector.
#[derive(Clone)]
pub enum ResummationStrategy {
    NoShift,
    Fixed(ShiftVector),
    Optimal,
    PiecewiseConstant,
    IndexConditioned(Arc<IndexShiftTables>),
    PerOrder(Arc<PerOrderGrid>),
}

impl ResummationStrategy {
    /// Index-conditioned strategy with its scalar tables precomputed for
    /// this system.
    pub fn index_conditioned(sys: &OpenSystem) -> Self {
        ResummationStrategy::IndexConditioned(Arc::new(IndexShiftTables::new(sys)))
    }

    pub fn per_order(grid: PerOrderGrid) -> Self {
        ResummationStrategy::PerOrder(Arc::new(grid))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResummationStrategy::NoShift => "no_shift",
            ResummationStrategy::Fixed(_) => "fixed",
            ResummationStrategy::Optimal => "optimal",
            ResummationStrategy::PiecewiseConstant => "piecewise_constant",
            ResummationStrategy::IndexConditioned(_) => "index_conditioned",
            ResummationStrategy::PerOrder(_) => "per_order",
        }
    }

    /// Shift in force at t = 0 before any jump.
    pub fn initial_shift(&self, sys: &OpenSystem, state: &BranchState) -> Result<ShiftVector> {
        match self {
            ResummationStrategy::NoShift => Ok(ShiftVector::zero(sys.num_jumps())),
            ResummationStrategy::Fixed(v) => {
                v.check_len(sys)?;
                Ok(v.clone())
            }
            ResummationStrategy::Optimal | ResummationStrategy::PiecewiseConstant => {
                state.optimal_shift(sys)
            }
            ResummationStrategy::IndexConditioned(tables) => tables.shift_for(&[]),
            ResummationStrategy::PerOrder(grid) => {
                Ok(grid.shift_at(0, 0.0)?.unwrap_or_else(|| ShiftVector::zero(sys.num_jumps())))
            }
        }
    }

    /// Whether the shift can change during continuous evolution.
    fn adaptive_between_jumps(&self) -> bool {
        matches!(self, ResummationStrategy::Optimal | ResummationStrategy::PerOrder(_))
    }
}

/// Shift resolution inside one evolution segment.
fn segment_shift(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    state: &BranchState,
    order: usize,
    t: f64,
    last: &ShiftVector,
) -> Result<ShiftVector> {
    match strategy {
        ResummationStrategy::Optimal => {
            // A dying branch keeps its last shift; the rate denominators
            // are no longer meaningful.
            if state.weight() <= EPS_TRACE {
                Ok(last.clone())
            } else {
                state.optimal_shift(sys)
            }
        }
        ResummationStrategy::PerOrder(grid) => {
            Ok(grid.shift_at(order, t)?.unwrap_or_else(|| last.clone()))
        }
        _ => Ok(last.clone()),
    }
}

// --- continuous evolution ----------------------------------------------

/// 1D FFT pair for ket split-stepping; transforms are unscaled, the
/// inverse path divides by n.
struct KetFft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl KetFft {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        KetFft { n, fwd, inv, scratch: vec![ZERO; scratch_len] }
    }

    /// ψ ← exp(−i T τ) ψ with T diagonal in momentum.
    fn kinetic(&mut self, psi: &mut CVec, phases: &[C64]) {
        let s = psi.as_slice_mut().expect("contiguous ket");
        self.fwd.process_with_scratch(s, &mut self.scratch);
        for (z, p) in s.iter_mut().zip(phases) {
            *z *= *p;
        }
        self.inv.process_with_scratch(s, &mut self.scratch);
        let inv_n = C64::new(1.0 / self.n as f64, 0.0);
        for z in s.iter_mut() {
            *z *= inv_n;
        }
    }
}

/// Position-diagonal part of the shifted effective Hamiltonian:
/// D(x) = −(i/2)Σ_j|l_j(x)|² − iΣ_j α_j* l_j(x) − (i/2)Σ_j|α_j|².
fn spatial_diag(info: &SpatialInfo, alpha: &ShiftVector) -> Vec<C64> {
    let n = info.grid.points;
    let mut d = vec![ZERO; n];
    let mut a2 = 0.0;
    for (j, diag) in info.jump_diags.iter().enumerate() {
        let a = alpha[j];
        a2 += a.norm_sqr();
        let ac = a.conj();
        for x in 0..n {
            let l = diag[x];
            d[x] += -I * (C64::new(0.5, 0.0) * l.norm_sqr() + ac * l);
        }
    }
    if a2 != 0.0 {
        let shift = -I * C64::new(0.5 * a2, 0.0);
        for z in d.iter_mut() {
            *z += shift;
        }
    }
    d
}

fn diag_is_constant(d: &[C64]) -> bool {
    let scale = d.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    d.iter().all(|z| (*z - d[0]).norm() <= 1e-13 * (scale + 1e-300))
}

fn spatial_evolve(
    sys: &OpenSystem,
    info: &SpatialInfo,
    strategy: &ResummationStrategy,
    branch: &mut Branch,
    t_target: f64,
    dt: f64,
) -> Result<()> {
    let delta = t_target - branch.current_time;
    let adaptive = strategy.adaptive_between_jumps();
    let mut alpha = segment_shift(
        sys,
        strategy,
        &branch.state,
        branch.record.len(),
        branch.current_time,
        &branch.current_shift,
    )?;
    let mut d = spatial_diag(info, &alpha);
    // A position-independent diagonal commutes with the kinetic term, so
    // a single split step is exact (collisional models at α = 0).
    let n_steps = if !adaptive && diag_is_constant(&d) {
        1
    } else {
        ((delta / dt).ceil() as usize).max(1)
    };
    let h = delta / n_steps as f64;
    let half_phases: Vec<C64> =
        info.kinetic_k.iter().map(|&e| (-I * (e * 0.5 * h)).exp()).collect();

    match &mut branch.state {
        BranchState::Pure(psi) => {
            let mut fft = KetFft::new(info.grid.points);
            for step in 0..n_steps {
                if adaptive && step > 0 {
                    let t_now = branch.current_time + step as f64 * h;
                    alpha = segment_shift(
                        sys,
                        strategy,
                        &PureView(psi).as_state(),
                        branch.record.len(),
                        t_now,
                        &alpha,
                    )?;
                    d = spatial_diag(info, &alpha);
                }
                fft.kinetic(psi, &half_phases);
                for (z, dx) in psi.iter_mut().zip(&d) {
                    *z *= (-I * *dx * C64::new(h, 0.0)).exp();
                }
                fft.kinetic(psi, &half_phases);
            }
        }
        BranchState::Mixed(rho) => {
            let mut kernel = crate::propagator::SpatialKernel::new(info.grid.points);
            for step in 0..n_steps {
                if adaptive && step > 0 {
                    let t_now = branch.current_time + step as f64 * h;
                    let view = BranchState::Mixed(rho.clone());
                    alpha = segment_shift(sys, strategy, &view, branch.record.len(), t_now, &alpha)?;
                    d = spatial_diag(info, &alpha);
                }
                *rho = kernel.kinetic_conjugate(rho, &info.kinetic_k, 0.5 * h);
                let f: Vec<C64> = d.iter().map(|&dx| (-I * dx * C64::new(h, 0.0)).exp()).collect();
                for ((a, b), z) in rho.indexed_iter_mut() {
                    *z *= f[a] * f[b].conj();
                }
                *rho = kernel.kinetic_conjugate(rho, &info.kinetic_k, 0.5 * h);
            }
        }
    }
    branch.current_time = t_target;
    branch.current_shift = alpha;
    Ok(())
}

/// Zero-copy wrapper letting the pure stepper hand its ket to the shift
/// resolver without cloning.
struct PureView<'a>(&'a CVec);

impl<'a> PureView<'a> {
    fn as_state(&self) -> BranchState {
        BranchState::Pure(self.0.clone())
    }
}

/// Exact segment evolution when the unshifted effective Hamiltonian is
/// diagonal and the shift vanishes: elementwise phase/decay factors.
fn diag_exact_evolve(diag: &CVec, state: &mut BranchState, delta: f64) {
    let factors: Vec<C64> = diag.iter().map(|&d| (-I * d * C64::new(delta, 0.0)).exp()).collect();
    match state {
        BranchState::Pure(psi) => {
            for (z, f) in psi.iter_mut().zip(&factors) {
                *z *= *f;
            }
        }
        BranchState::Mixed(rho) => {
            for ((a, b), z) in rho.indexed_iter_mut() {
                *z *= factors[a] * factors[b].conj();
            }
        }
    }
}

/// stage ← psi + c·k, without allocating.
fn write_stage(stage: &mut CVec, psi: &CVec, k: &CVec, c: f64) {
    let c = C64::new(c, 0.0);
    for ((s, p), q) in stage.iter_mut().zip(psi.iter()).zip(k.iter()) {
        *s = *p + c * *q;
    }
}

/// Optimal shift of a pure state without wrapping it in a `BranchState`;
/// keeps the previous shift when the norm has nearly vanished.
fn pure_optimal_shift(sys: &OpenSystem, psi: &CVec, last: &ShiftVector) -> Result<ShiftVector> {
    let w: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if w <= EPS_TRACE {
        return Ok(last.clone());
    }
    let inv = C64::new(-1.0 / w, 0.0);
    let values = (0..sys.num_jumps())
        .map(|j| inv * sys.jump_banded(j).expectation(psi))
        .collect();
    Ok(ShiftVector::new(values))
}

/// dψ = −i H_eff(α)ψ through the banded forms:
/// −i H₀^eff ψ − Σ_j α_j* L_j ψ − ½Σ|α_j|² ψ.
fn rhs_pure(sys: &OpenSystem, alpha: &ShiftVector, psi: &CVec, out: &mut CVec) {
    out.fill(ZERO);
    sys.heff0_banded().accumulate_matvec(-I, psi, out);
    let mut a2 = 0.0;
    for j in 0..sys.num_jumps() {
        let a = alpha[j];
        a2 += a.norm_sqr();
        if a != ZERO {
            sys.jump_banded(j).accumulate_matvec(-a.conj(), psi, out);
        }
    }
    if a2 != 0.0 {
        let c = C64::new(-0.5 * a2, 0.0);
        for (o, p) in out.iter_mut().zip(psi.iter()) {
            *o += c * *p;
        }
    }
}

/// dρ = −i(H_eff ρ − ρ H_eff†) through the banded forms.
fn rhs_mixed(
    sys: &OpenSystem,
    heff0_dag: &crate::linalg::BandedOp,
    jump_dags: &[crate::linalg::BandedOp],
    alpha: &ShiftVector,
    rho: &CMat,
    out: &mut CMat,
) {
    out.fill(ZERO);
    sys.heff0_banded().accumulate_matmat_left(-I, rho, out);
    heff0_dag.accumulate_matmat_right(I, rho, out);
    let mut a2 = 0.0;
    for j in 0..sys.num_jumps() {
        let a = alpha[j];
        a2 += a.norm_sqr();
        if a != ZERO {
            sys.jump_banded(j).accumulate_matmat_left(-a.conj(), rho, out);
            jump_dags[j].accumulate_matmat_right(-a, rho, out);
        }
    }
    if a2 != 0.0 {
        let c = C64::new(-a2, 0.0);
        out.zip_mut_with(rho, |o, &z| *o += c * z);
    }
}

fn dense_rk4_evolve(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    branch: &mut Branch,
    t_target: f64,
    dt: f64,
) -> Result<()> {
    let delta = t_target - branch.current_time;
    let n_steps = ((delta / dt).ceil() as usize).max(1);
    let h = delta / n_steps as f64;
    let adaptive = strategy.adaptive_between_jumps();
    let mut alpha = segment_shift(
        sys,
        strategy,
        &branch.state,
        branch.record.len(),
        branch.current_time,
        &branch.current_shift,
    )?;

    match &mut branch.state {
        BranchState::Pure(psi) => {
            let dim = psi.len();
            let mut k1 = CVec::from_elem(dim, ZERO);
            let mut k2 = k1.clone();
            let mut k3 = k1.clone();
            let mut k4 = k1.clone();
            let mut stage = k1.clone();
            // buffers are reused across steps; this loop dominates the
            // sampler's runtime
            for step in 0..n_steps {
                if adaptive && step > 0 {
                    let t_now = branch.current_time + step as f64 * h;
                    alpha = match strategy {
                        ResummationStrategy::Optimal => pure_optimal_shift(sys, psi, &alpha)?,
                        _ => segment_shift(
                            sys,
                            strategy,
                            &PureView(psi).as_state(),
                            branch.record.len(),
                            t_now,
                            &alpha,
                        )?,
                    };
                }
                let w_before: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
                rhs_pure(sys, &alpha, psi, &mut k1);
                write_stage(&mut stage, psi, &k1, 0.5 * h);
                rhs_pure(sys, &alpha, &stage, &mut k2);
                write_stage(&mut stage, psi, &k2, 0.5 * h);
                rhs_pure(sys, &alpha, &stage, &mut k3);
                write_stage(&mut stage, psi, &k3, h);
                rhs_pure(sys, &alpha, &stage, &mut k4);
                let sixth = h / 6.0;
                let mut w_after = 0.0;
                for i in 0..dim {
                    let z = psi[i]
                        + C64::new(sixth, 0.0)
                            * (k1[i] + (k2[i] + k3[i]) * C64::new(2.0, 0.0) + k4[i]);
                    psi[i] = z;
                    w_after += z.norm_sqr();
                }
                if w_after > w_before * (1.0 + MAX_WEIGHT_GROWTH) {
                    return Err(Error::StepTooLarge {
                        drift: w_after / w_before.max(1e-300) - 1.0,
                        limit: MAX_WEIGHT_GROWTH,
                    });
                }
            }
        }
        BranchState::Mixed(rho) => {
            let dim = rho.nrows();
            let heff0_dag = sys.heff0_banded().dagger();
            let jump_dags: Vec<_> = (0..sys.num_jumps()).map(|j| sys.jump_banded(j).dagger()).collect();
            let mut k1 = CMat::from_elem((dim, dim), ZERO);
            let mut k2 = k1.clone();
            let mut k3 = k1.clone();
            let mut k4 = k1.clone();
            for step in 0..n_steps {
                if adaptive && step > 0 {
                    let t_now = branch.current_time + step as f64 * h;
                    let view = BranchState::Mixed(rho.clone());
                    alpha = segment_shift(sys, strategy, &view, branch.record.len(), t_now, &alpha)?;
                }
                let w_before = trace(rho).re;
                rhs_mixed(sys, &heff0_dag, &jump_dags, &alpha, rho, &mut k1);
                let stage = &*rho + &(&k1 * C64::new(0.5 * h, 0.0));
                rhs_mixed(sys, &heff0_dag, &jump_dags, &alpha, &stage, &mut k2);
                let stage = &*rho + &(&k2 * C64::new(0.5 * h, 0.0));
                rhs_mixed(sys, &heff0_dag, &jump_dags, &alpha, &stage, &mut k3);
                let stage = &*rho + &(&k3 * C64::new(h, 0.0));
                rhs_mixed(sys, &heff0_dag, &jump_dags, &alpha, &stage, &mut k4);
                *rho = &*rho
                    + &((&k1 + &(&k2 * C64::new(2.0, 0.0)) + &(&k3 * C64::new(2.0, 0.0)) + &k4)
                        * C64::new(h / 6.0, 0.0));
                let w_after = trace(rho).re;
                if w_after > w_before * (1.0 + MAX_WEIGHT_GROWTH) {
                    return Err(Error::StepTooLarge {
                        drift: w_after / w_before.max(1e-300) - 1.0,
                        limit: MAX_WEIGHT_GROWTH,
                    });
                }
            }
        }
    }
    branch.current_time = t_target;
    branch.current_shift = alpha;
    Ok(())
}

fn evolve_branch_mut(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    branch: &mut Branch,
    t_target: f64,
    dt: f64,
) -> Result<()> {
    if t_target < branch.current_time {
        return Err(Error::InvalidModel(format!(
            "evolution target {t_target} precedes branch time {}",
            branch.current_time
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidModel(format!("step dt must be positive, got {dt}")));
    }
    if branch.dead || t_target == branch.current_time {
        branch.current_time = t_target;
        return Ok(());
    }

    let delta = t_target - branch.current_time;
    match sys.spatial() {
        Some(info) => spatial_evolve(sys, info, strategy, branch, t_target, dt)?,
        None => {
            // Exact elementwise path when the unshifted effective
            // Hamiltonian is diagonal and no shift is in force.
            let static_zero_shift = !strategy.adaptive_between_jumps()
                && branch.current_shift.is_zero();
            if static_zero_shift {
                if let Some(diag) = sys.heff0_diag() {
                    diag_exact_evolve(diag, &mut branch.state, delta);
                    branch.current_time = t_target;
                } else {
                    dense_rk4_evolve(sys, strategy, branch, t_target, dt)?;
                }
            } else {
                dense_rk4_evolve(sys, strategy, branch, t_target, dt)?;
            }
        }
    }
    if !branch.state.is_finite() {
        return Err(Error::NonFinite { context: "branch state after evolution".into() });
    }
    // Optimal keeps its shift synchronized with the state so a jump at
    // this instant uses the rate-minimizing operator.
    if matches!(strategy, ResummationStrategy::Optimal) && branch.state.weight() > EPS_TRACE {
        branch.current_shift = branch.state.optimal_shift(sys)?;
    }
    branch.refresh_dead();
    Ok(())
}

/// Evolve the branch continuously to `t_target` under the strategy's
/// shift. A branch whose weight falls below the trace cutoff comes back
/// dead (zero state), not as an error.
pub fn evolve_branch(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    branch: &Branch,
    t_target: f64,
    dt: f64,
) -> Result<Branch> {
    let mut b = branch.clone();
    evolve_branch_mut(sys, strategy, &mut b, t_target, dt)?;
    Ok(b)
}

fn jump_branch_mut(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    branch: &mut Branch,
    j: usize,
) -> Result<()> {
    if j >= sys.num_jumps() {
        return Err(Error::IndexOutOfRange { index: j, count: sys.num_jumps() });
    }
    let t = branch.current_time;
    branch.record.push(j, t)?;
    if branch.dead {
        return Ok(());
    }
    let a = branch.current_shift[j];
    match &mut branch.state {
        BranchState::Pure(psi) => {
            let mut out = CVec::from_elem(psi.len(), ZERO);
            sys.jump_banded(j).accumulate_matvec(C64::new(1.0, 0.0), psi, &mut out);
            if a != ZERO {
                for (o, p) in out.iter_mut().zip(psi.iter()) {
                    *o += a * *p;
                }
            }
            *psi = out;
        }
        BranchState::Mixed(rho) => {
            *rho = crate::model::apply_jump(sys, &branch.current_shift, j, rho)?;
        }
    }
    branch.refresh_dead();
    if branch.dead {
        return Ok(());
    }
    // post-jump shift update
    match strategy {
        ResummationStrategy::Optimal | ResummationStrategy::PiecewiseConstant => {
            // near-zero weight: keep the previous shift instead of
            // dividing by a vanishing trace
            if branch.state.weight() > EPS_TRACE {
                branch.current_shift = branch.state.optimal_shift(sys)?;
            }
        }
        ResummationStrategy::IndexConditioned(tables) => {
            let indices: Vec<usize> = branch.record.events.iter().map(|&(ji, _)| ji).collect();
            branch.current_shift = tables.shift_for(&indices)?;
        }
        ResummationStrategy::PerOrder(grid) => {
            if let Some(v) = grid.shift_at(branch.record.len(), t)? {
                branch.current_shift = v;
            }
        }
        ResummationStrategy::NoShift | ResummationStrategy::Fixed(_) => {}
    }
    Ok(())
}

/// Apply jump `j` at the branch's current time with the shift in force;
/// extends the record and updates the shift per strategy. A dead branch
/// only records the event.
pub fn jump_branch(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    branch: &Branch,
    j: usize,
) -> Result<Branch> {
    let mut b = branch.clone();
    jump_branch_mut(sys, strategy, &mut b, j)?;
    Ok(b)
}

/// Evaluate the full record: alternate continuous evolution and jumps,
/// then evolve to the final time `t`.
pub fn evaluate_record(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    state0: &BranchState,
    record: &JumpRecord,
    t: f64,
    dt: f64,
) -> Result<Branch> {
    record.validate(sys)?;
    if let Some(&(_, last)) = record.events.last() {
        if last > t {
            return Err(Error::GridRangeError { time: last, t_max: t });
        }
    }
    let mut branch = Branch::new(sys, strategy, state0.clone())?;
    for &(j, tj) in &record.events {
        evolve_branch_mut(sys, strategy, &mut branch, tj, dt)?;
        jump_branch_mut(sys, strategy, &mut branch, j)?;
        if branch.dead {
            // fast-forward: remaining events only extend the record
            continue;
        }
    }
    evolve_branch_mut(sys, strategy, &mut branch, t, dt)?;
    Ok(branch)
}
