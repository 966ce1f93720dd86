//! History-dependent shift rules that do not need the branch state:
//! the index-conditioned recursion and the per-order time grid.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::dagger;
use crate::model::{OpenSystem, ShiftVector, EPS_TRACE};

/// Scalar tables for the index-conditioned recursion. The recursion only
/// ever needs traces of at most three jump operators, so precomputing
/// the trace table once per system replaces per-sequence memoization:
/// each recursion step is O(number of jump operators) scalar work.
#[derive(Debug, Clone)]
pub struct IndexShiftTables {
    dim: f64,
    n_ops: usize,
    tr_l: Vec<C64>,
    /// Tr[L_k L_k†]
    fro2: Vec<f64>,
    /// m0[j][k] = Tr[L_j L_k L_k†]
    m0: Vec<Vec<C64>>,
    /// c1[j][k] = Tr[L_j L_k†]
    c1: Vec<Vec<C64>>,
    /// c2[j][k] = Tr[L_j L_k]
    c2: Vec<Vec<C64>>,
}

impl IndexShiftTables {
    pub fn new(sys: &OpenSystem) -> Self {
        let n_ops = sys.num_jumps();
        let tr_l: Vec<C64> = (0..n_ops).map(|j| sys.trace_l(j)).collect();
        let mut fro2 = vec![0.0; n_ops];
        let mut m0 = vec![vec![C64::new(0.0, 0.0); n_ops]; n_ops];
        let mut c1 = vec![vec![C64::new(0.0, 0.0); n_ops]; n_ops];
        let mut c2 = vec![vec![C64::new(0.0, 0.0); n_ops]; n_ops];
        for k in 0..n_ops {
            let lk = &sys.jump_ops()[k];
            let lk_dag = dagger(lk);
            let m = lk.dot(&lk_dag);
            fro2[k] = lk.iter().map(|z| z.norm_sqr()).sum();
            for j in 0..n_ops {
                m0[j][k] = sys.jump_banded(j).trace_product(&m);
                c1[j][k] = sys.jump_banded(j).trace_product(&lk_dag);
                c2[j][k] = sys.jump_banded(j).trace_product(lk);
            }
        }
        IndexShiftTables { dim: sys.dim() as f64, n_ops, tr_l, fro2, m0, c1, c2 }
    }

    pub fn num_ops(&self) -> usize {
        self.n_ops
    }

    /// Base case: complete ignorance ρ ∝ 𝟙, so α_j = −Tr L_j / dim.
    pub fn base_shift(&self) -> ShiftVector {
        let inv = C64::new(1.0 / self.dim, 0.0);
        ShiftVector::new(self.tr_l.iter().map(|&t| -t * inv).collect())
    }

    /// Deterministic recursion over the index sequence: at each step the
    /// post-jump state is approximated by L′L′† with L′ the previously
    /// shifted operator of the jump just taken, and the shift of every
    /// operator is re-optimized against it.
    pub fn shift_for(&self, indices: &[usize]) -> Result<ShiftVector> {
        let mut alpha = self.base_shift();
        for &k in indices {
            if k >= self.n_ops {
                return Err(Error::IndexOutOfRange { index: k, count: self.n_ops });
            }
            let a = alpha[k];
            // Tr[L′L′†] with L′ = L_k + a
            let denom =
                self.fro2[k] + 2.0 * (a.conj() * self.tr_l[k]).re + a.norm_sqr() * self.dim;
            if denom <= EPS_TRACE {
                return Err(Error::VanishingWeight { trace: denom, cutoff: EPS_TRACE });
            }
            let inv = C64::new(1.0 / denom, 0.0);
            let a2 = C64::new(a.norm_sqr(), 0.0);
            let next: Vec<C64> = (0..self.n_ops)
                .map(|j| {
                    // Tr[L_j L′L′†] expanded in a
                    let num = self.m0[j][k]
                        + a * self.c1[j][k]
                        + a.conj() * self.c2[j][k]
                        + a2 * self.tr_l[j];
                    -num * inv
                })
                .collect();
            alpha = ShiftVector::new(next);
        }
        Ok(alpha)
    }
}

/// Shift conditioned on the jump index sequence alone.
pub fn index_conditioned_shift(sys: &OpenSystem, jump_indices: &[usize]) -> Result<ShiftVector> {
    IndexShiftTables::new(sys).shift_for(jump_indices)
}

/// Time-gridded shift estimate per expansion order, built from a cheap
/// unshifted first pass; branches of order n read α(t, n) off this grid
/// with linear interpolation.
#[derive(Debug, Clone)]
pub struct PerOrderGrid {
    t_max: f64,
    times: Vec<f64>,
    /// shifts[n][g]; None where the estimated order weight vanished.
    shifts: Vec<Vec<Option<ShiftVector>>>,
}

impl PerOrderGrid {
    /// Assemble from explicit node values (uniform-in-time nodes).
    pub fn from_values(times: Vec<f64>, shifts: Vec<Vec<Option<ShiftVector>>>) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("per-order grid needs increasing times".into()));
        }
        if shifts.is_empty() || shifts.iter().any(|row| row.len() != times.len()) {
            return Err(Error::InvalidModel("per-order grid shape mismatch".into()));
        }
        let t_max = *times.last().unwrap();
        Ok(PerOrderGrid { t_max, times, shifts })
    }

    /// First pass: estimate Tr ρ^(n) and Tr[L_j ρ^(n)] on a uniform time
    /// grid with the unshifted strategy, then store α = −Tr[L ρ]/Tr ρ
    /// per (order, node).
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        sys: &OpenSystem,
        state0: &super::BranchState,
        t_max: f64,
        dt: f64,
        max_order: usize,
        n_times: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(t_max > 0.0) || n_times < 2 || n_samples == 0 {
            return Err(Error::InvalidModel("bad per-order grid parameters".into()));
        }
        let n_ops = sys.num_jumps();
        let times: Vec<f64> =
            (0..n_times).map(|g| t_max * g as f64 / (n_times - 1) as f64).collect();
        let sampler = crate::montecarlo::IndexSampler::new(sys);
        let noshift = super::ResummationStrategy::NoShift;

        let mut shifts: Vec<Vec<Option<ShiftVector>>> = Vec::with_capacity(max_order + 1);
        for n in 0..=max_order {
            let mut row = Vec::with_capacity(times.len());
            for (g, &tg) in times.iter().enumerate() {
                let (tr_rho, tr_l) = if n == 0 {
                    let branch = super::evaluate_record(
                        sys,
                        &noshift,
                        state0,
                        &super::JumpRecord::new(),
                        tg,
                        dt,
                    )?;
                    let w = branch.weight();
                    let tl: Vec<C64> =
                        (0..n_ops).map(|j| branch.state.trace_l(sys, j)).collect();
                    (w, tl)
                } else if tg <= 0.0 {
                    // the n-jump term carries no weight at t = 0
                    (0.0, vec![C64::new(0.0, 0.0); n_ops])
                } else {
                    let mut w_acc = 0.0;
                    let mut tl_acc = vec![C64::new(0.0, 0.0); n_ops];
                    let enumerated = crate::montecarlo::enumerate_tuples(n_ops, n, 256);
                    for s in 0..n_samples {
                        let mut rng = crate::montecarlo::stream_rng(
                            seed,
                            [0xB11D_0000 + n as u64, g as u64, s as u64],
                        );
                        let (jump_times, p) = crate::montecarlo::sample_jump_times(
                            n,
                            tg,
                            &crate::montecarlo::TimeDistribution::Uniform,
                            &mut rng,
                        );
                        let mut handle = |tuple: &[usize], reweight: f64| -> Result<()> {
                            let rec = super::JumpRecord::from_events(
                                tuple.iter().copied().zip(jump_times.iter().copied()).collect(),
                            )?;
                            let branch =
                                super::evaluate_record(sys, &noshift, state0, &rec, tg, dt)?;
                            let w = reweight / p;
                            w_acc += w * branch.weight();
                            if !branch.dead {
                                for (j, tl) in tl_acc.iter_mut().enumerate() {
                                    *tl += branch.state.trace_l(sys, j) * C64::new(w, 0.0);
                                }
                            }
                            Ok(())
                        };
                        match &enumerated {
                            Some(tuples) => {
                                for tuple in tuples {
                                    handle(tuple, 1.0)?;
                                }
                            }
                            None => {
                                let (tuple, inv_q) = sampler.sample_tuple(n, &mut rng);
                                handle(&tuple, inv_q)?;
                            }
                        }
                    }
                    let inv_n = 1.0 / n_samples as f64;
                    (w_acc * inv_n, tl_acc.iter().map(|&z| z * inv_n).collect())
                };
                if tr_rho > 1e-12 {
                    let inv = C64::new(1.0 / tr_rho, 0.0);
                    row.push(Some(ShiftVector::new(tr_l.iter().map(|&z| -z * inv).collect())));
                } else {
                    row.push(None);
                }
            }
            shifts.push(row);
        }
        Ok(PerOrderGrid { t_max, times, shifts })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn max_order(&self) -> usize {
        self.shifts.len() - 1
    }

    /// α(t) for order n, linearly interpolated; None signals a node with
    /// vanishing estimated weight (callers fall back to their last
    /// shift), as does an order beyond the grid.
    pub fn shift_at(&self, n: usize, t: f64) -> Result<Option<ShiftVector>> {
        let tol = 1e-12 * self.t_max.max(1.0);
        if t < -tol || t > self.t_max + tol {
            return Err(Error::GridRangeError { time: t, t_max: self.t_max });
        }
        if n >= self.shifts.len() {
            return Ok(None);
        }
        let t = t.clamp(0.0, self.t_max);
        let row = &self.shifts[n];
        let i = match self.times.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok(row[i].clone()),
            Err(i) => i.clamp(1, self.times.len() - 1),
        };
        match (&row[i - 1], &row[i]) {
            (Some(a), Some(b)) => {
                let s = (t - self.times[i - 1]) / (self.times[i] - self.times[i - 1]);
                let sv = ShiftVector::new(
                    a.alphas
                        .iter()
                        .zip(&b.alphas)
                        .map(|(&x, &y)| x * C64::new(1.0 - s, 0.0) + y * C64::new(s, 0.0))
                        .collect(),
                );
                Ok(Some(sv))
            }
            _ => Ok(None),
        }
    }
}

/// Grid lookup for a single operator; a vanished order maps to the
/// vanishing-weight error so callers can apply their fallback.
pub fn per_order_shift(grid: &PerOrderGrid, n: usize, j: usize, t: f64) -> Result<C64> {
    match grid.shift_at(n, t)? {
        Some(v) => Ok(v[j]),
        None => Err(Error::VanishingWeight { trace: 0.0, cutoff: EPS_TRACE }),
    }
}
