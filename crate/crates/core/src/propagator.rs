//! Direct integration of the full master equation — the reference against
//! which the jump expansion is judged — and the jump-rate profile that
//! feeds importance sampling.
//!
//! Two integration paths:
//! - dense systems: fixed-step classical RK4 on the Lindblad right-hand
//!   side, with all operator applications going through the banded forms;
//! - spatial systems (kinetic Hamiltonian, position-diagonal jumps):
//!   Strang splitting where both factors are applied exactly, the kinetic
//!   one by FFT conjugation and the dissipator elementwise in position.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, trace, CMat, I, ONE};
use crate::model::{OpenSystem, SpatialInfo};

/// Abort threshold for single-step trace drift.
const MAX_STEP_DRIFT: f64 = 1e-6;
/// Eigenvalues below −TOL_POS·Trρ abort the propagation.
const TOL_POS: f64 = 1e-7;

/// Stored trajectory of a reference propagation.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<CMat>,
    /// Σ_j Tr[L_j†L_j ρ_t] at each stored time.
    pub rate_profile: Vec<f64>,
}

impl PropagationResult {
    pub fn final_state(&self) -> &CMat {
        self.states.last().expect("at least the initial state is stored")
    }

    /// CSV dump: time, trace, purity, rate_profile.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,trace,purity,rate_profile\n");
        for (i, t) in self.times.iter().enumerate() {
            let rho = &self.states[i];
            let tr = trace(rho).re;
            let purity = rho.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let _ = writeln!(out, "{},{},{},{}", t, tr, purity, self.rate_profile[i]);
        }
        out
    }
}

fn total_rate(sys: &OpenSystem, rho: &CMat) -> f64 {
    (0..sys.num_jumps()).map(|j| sys.gamma_banded(j).trace_product(rho).re).sum()
}

/// Lindblad right-hand side through the banded operator forms:
/// −i(H₀^eff ρ − ρ H₀^eff†) + Σ_j L_j ρ L_j†.
fn lindblad_rhs(sys: &OpenSystem, rho: &CMat, scratch: &mut CMat, out: &mut CMat) {
    out.fill(C64::new(0.0, 0.0));
    let heff = sys.heff0_banded();
    heff.accumulate_matmat_left(-I, rho, out);
    // ρ H† term: (H ρ†)† would need a transpose; use the daggered band.
    let heff_dag = heff.dagger();
    heff_dag.accumulate_matmat_right(I, rho, out);
    for j in 0..sys.num_jumps() {
        scratch.fill(C64::new(0.0, 0.0));
        sys.jump_banded(j).accumulate_matmat_left(ONE, rho, scratch);
        sys.jump_banded(j).dagger().accumulate_matmat_right(ONE, scratch, out);
    }
}

fn symmetrize(rho: &mut CMat) {
    let n = rho.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (rho[[i, j]] + rho[[j, i]].conj());
            rho[[i, j]] = avg;
            rho[[j, i]] = avg.conj();
        }
        rho[[i, i]] = C64::new(rho[[i, i]].re, 0.0);
    }
}

fn check_positivity(rho: &CMat, t: f64) -> Result<()> {
    let tr = trace(rho).re;
    let eig = hermitian_eig(rho)?;
    let min = eig.eigenvalues[0];
    if min < -TOL_POS * tr.max(1e-300) {
        return Err(Error::PositivityViolation { eigenvalue: min, time: t });
    }
    Ok(())
}

/// Integrate ∂ρ = ℒρ from 0 to `t_final` with fixed step `dt`, storing
/// every `store_every`-th grid point (the final state is always stored).
pub fn propagate(
    sys: &OpenSystem,
    rho0: &CMat,
    t_final: f64,
    dt: f64,
    store_every: usize,
) -> Result<PropagationResult> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidModel(format!("bad time grid: t_final {t_final}, dt {dt}")));
    }
    match sys.spatial() {
        Some(info) => propagate_spatial(sys, info, rho0, t_final, dt, store_every),
        None => propagate_dense(sys, rho0, t_final, dt, store_every),
    }
}

fn propagate_dense(
    sys: &OpenSystem,
    rho0: &CMat,
    t_final: f64,
    dt: f64,
    store_every: usize,
) -> Result<PropagationResult> {
    let n_steps = (t_final / dt).ceil().max(1.0) as usize;
    let h = if t_final > 0.0 { t_final / n_steps as f64 } else { 0.0 };
    let store_every = store_every.max(1);
    let dim = sys.dim();

    let mut rho = rho0.clone();
    let mut times = vec![0.0];
    let mut states = vec![rho.clone()];
    let mut rate_profile = vec![total_rate(sys, &rho)];

    let mut k1 = CMat::from_elem((dim, dim), C64::new(0.0, 0.0));
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut scratch = k1.clone();

    for step in 0..n_steps {
        if t_final == 0.0 {
            break;
        }
        let tr_before = trace(&rho).re;
        lindblad_rhs(sys, &rho, &mut scratch, &mut k1);
        let stage = &rho + &(&k1 * C64::new(0.5 * h, 0.0));
        lindblad_rhs(sys, &stage, &mut scratch, &mut k2);
        let stage = &rho + &(&k2 * C64::new(0.5 * h, 0.0));
        lindblad_rhs(sys, &stage, &mut scratch, &mut k3);
        let stage = &rho + &(&k3 * C64::new(h, 0.0));
        lindblad_rhs(sys, &stage, &mut scratch, &mut k4);
        rho = rho
            + (&k1 + &(&k2 * C64::new(2.0, 0.0)) + &(&k3 * C64::new(2.0, 0.0)) + &k4)
                * C64::new(h / 6.0, 0.0);
        symmetrize(&mut rho);

        let t = (step + 1) as f64 * h;
        let drift = (trace(&rho).re - tr_before).abs();
        if drift > MAX_STEP_DRIFT * tr_before.max(1.0) {
            return Err(Error::StepTooLarge { drift, limit: MAX_STEP_DRIFT });
        }
        if (step + 1) % store_every == 0 || step + 1 == n_steps {
            check_positivity(&rho, t)?;
            times.push(t);
            states.push(rho.clone());
            rate_profile.push(total_rate(sys, &rho));
        }
    }
    Ok(PropagationResult { times, states, rate_profile })
}

/// FFT workspace for conjugating a density matrix into and out of the
/// momentum representation.
pub struct SpatialKernel {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl SpatialKernel {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        SpatialKernel { n, fwd, inv, scratch: vec![C64::new(0.0, 0.0); scratch_len] }
    }

    fn rows(&mut self, m: &mut CMat, forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        for mut row in m.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major storage");
            fft.process_with_scratch(slice, &mut self.scratch);
        }
    }

    fn transpose(m: &CMat) -> CMat {
        m.t().as_standard_layout().to_owned()
    }

    /// ρ → F ρ F† / n (unitary momentum representation).
    pub fn to_momentum(&mut self, rho: &CMat) -> CMat {
        let mut t = Self::transpose(rho);
        self.rows(&mut t, true);
        let mut u = Self::transpose(&t);
        self.rows(&mut u, false);
        let scale = C64::new(1.0 / self.n as f64, 0.0);
        u.mapv_inplace(|z| z * scale);
        u
    }

    /// Inverse of `to_momentum`.
    pub fn from_momentum(&mut self, rho_k: &CMat) -> CMat {
        let mut t = Self::transpose(rho_k);
        self.rows(&mut t, false);
        let mut u = Self::transpose(&t);
        self.rows(&mut u, true);
        let scale = C64::new(1.0 / self.n as f64, 0.0);
        u.mapv_inplace(|z| z * scale);
        u
    }

    /// Exact kinetic conjugation exp(−iT τ) ρ exp(iT τ).
    pub fn kinetic_conjugate(&mut self, rho: &CMat, kinetic_k: &[f64], tau: f64) -> CMat {
        let phases: Vec<C64> = kinetic_k.iter().map(|&e| (-I * (e * tau)).exp()).collect();
        let mut rk = self.to_momentum(rho);
        for ((a, b), z) in rk.indexed_iter_mut() {
            *z *= phases[a] * phases[b].conj();
        }
        self.from_momentum(&rk)
    }
}

/// Elementwise dissipator factor exp(dt·M) with
/// M(x,x′) = Σ_j [l_j(x) l_j(x′)* − ½|l_j(x)|² − ½|l_j(x′)|²].
/// M vanishes on the diagonal, so the factor preserves the trace exactly.
fn dissipator_factor(info: &SpatialInfo, dt: f64) -> CMat {
    let n = info.grid.points;
    let mut m = CMat::from_elem((n, n), C64::new(0.0, 0.0));
    for diag in &info.jump_diags {
        let abs2: Vec<f64> = diag.iter().map(|z| z.norm_sqr()).collect();
        for x in 0..n {
            for y in 0..n {
                m[[x, y]] += diag[x] * diag[y].conj() - C64::new(0.5 * (abs2[x] + abs2[y]), 0.0);
            }
        }
    }
    m.mapv_inplace(|z| (z * C64::new(dt, 0.0)).exp());
    m
}

fn propagate_spatial(
    sys: &OpenSystem,
    info: &SpatialInfo,
    rho0: &CMat,
    t_final: f64,
    dt: f64,
    store_every: usize,
) -> Result<PropagationResult> {
    let n_steps = (t_final / dt).ceil().max(1.0) as usize;
    let h = if t_final > 0.0 { t_final / n_steps as f64 } else { 0.0 };
    let store_every = store_every.max(1);

    let mut kernel = SpatialKernel::new(info.grid.points);
    let diss = dissipator_factor(info, h);

    let mut rho = rho0.clone();
    let mut times = vec![0.0];
    let mut states = vec![rho.clone()];
    let mut rate_profile = vec![total_rate(sys, &rho)];

    for step in 0..n_steps {
        if t_final == 0.0 {
            break;
        }
        let tr_before = trace(&rho).re;
        rho = kernel.kinetic_conjugate(&rho, &info.kinetic_k, 0.5 * h);
        rho = &rho * &diss;
        rho = kernel.kinetic_conjugate(&rho, &info.kinetic_k, 0.5 * h);
        symmetrize(&mut rho);

        let t = (step + 1) as f64 * h;
        let drift = (trace(&rho).re - tr_before).abs();
        if drift > MAX_STEP_DRIFT * tr_before.max(1.0) {
            return Err(Error::StepTooLarge { drift, limit: MAX_STEP_DRIFT });
        }
        if (step + 1) % store_every == 0 || step + 1 == n_steps {
            times.push(t);
            states.push(rho.clone());
            rate_profile.push(total_rate(sys, &rho));
        }
    }
    // One positivity check at the end; per-point eigensolves on large
    // grids would dominate the runtime.
    check_positivity(&rho, t_final)?;
    Ok(PropagationResult { times, states, rate_profile })
}

/// Normalized piecewise-linear density over [0, t_max], built from the
/// jump-rate profile. Falls back to the uniform density when the profile
/// carries no weight.
#[derive(Debug, Clone)]
pub struct RateDensity {
    knots: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

impl RateDensity {
    pub fn uniform(t_max: f64) -> Self {
        RateDensity {
            knots: vec![0.0, t_max],
            pdf: vec![1.0 / t_max, 1.0 / t_max],
            cdf: vec![0.0, 1.0],
        }
    }

    pub fn t_max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Point evaluation by linear interpolation; zero outside [0, t_max].
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.t_max() {
            return 0.0;
        }
        let i = match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.pdf[i],
            Err(i) => i,
        };
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let s = (t - t0) / (t1 - t0);
        self.pdf[i - 1] * (1.0 - s) + self.pdf[i] * s
    }

    /// Inverse-CDF draw from a uniform variate in [0, 1).
    pub fn sample(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0 - 1e-16);
        let i = match self.cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => return self.knots[i.min(self.knots.len() - 1)],
            Err(i) => i.clamp(1, self.knots.len() - 1),
        };
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let (p0, p1) = (self.pdf[i - 1], self.pdf[i]);
        let dt = t1 - t0;
        let du = u - c0;
        // CDF on the segment: c0 + p0·s + (p1−p0)/(2dt)·s², s = t − t0.
        let a = 0.5 * (p1 - p0) / dt;
        let s = if a.abs() < 1e-14 * (p0.abs() + 1e-300) || a == 0.0 {
            if p0 > 0.0 {
                du / p0
            } else {
                dt * (du / (c1 - c0).max(1e-300))
            }
        } else {
            let disc = (p0 * p0 + 4.0 * a * du).max(0.0);
            (-p0 + disc.sqrt()) / (2.0 * a)
        };
        (t0 + s.clamp(0.0, dt)).min(self.t_max())
    }
}

/// Build the importance-sampling density p(t) ∝ Σ_j Tr[L_j†L_j ρ_t].
pub fn rate_density(result: &PropagationResult) -> RateDensity {
    let t_max = *result.times.last().unwrap();
    let raw: Vec<f64> = result.rate_profile.iter().map(|&r| r.max(0.0)).collect();
    // trapezoid mass
    let mut mass = 0.0;
    for i in 1..result.times.len() {
        mass += 0.5 * (raw[i - 1] + raw[i]) * (result.times[i] - result.times[i - 1]);
    }
    if mass <= 0.0 || t_max <= 0.0 || result.times.len() < 2 {
        return RateDensity::uniform(t_max.max(1e-300));
    }
    let pdf: Vec<f64> = raw.iter().map(|&r| r / mass).collect();
    let mut cdf = vec![0.0];
    for i in 1..result.times.len() {
        let seg = 0.5 * (pdf[i - 1] + pdf[i]) * (result.times[i] - result.times[i - 1]);
        cdf.push(cdf[i - 1] + seg);
    }
    let total = *cdf.last().unwrap();
    for c in cdf.iter_mut() {
        *c /= total;
    }
    RateDensity { knots: result.times.clone(), pdf, cdf }
}
