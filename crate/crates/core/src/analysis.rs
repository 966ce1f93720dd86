//! Convergence diagnostics: state fidelity, fidelity of renormalized
//! partial sums, and weight time series.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::expansion::{BranchState, ResummationStrategy};
use crate::linalg::{hermitian_eig, psd_sqrt, require_hermitian, trace, CMat, TOL_HERM};
use crate::model::{OpenSystem, EPS_TRACE};
use crate::montecarlo::{estimate_expansion, ExpansionEstimate, SamplerConfig};

/// Relative clamp for negative eigenvalues of MC-noisy partial sums;
/// anything more negative than this fraction of the trace is treated as
/// a real positivity violation rather than sampling noise.
pub const FID_CLAMP: f64 = 2e-2;

/// Clamp small negative eigenvalues to zero and renormalize to unit
/// trace; errors beyond the clamp tolerance.
fn clamped_unit(m: &CMat) -> Result<CMat> {
    require_hermitian(m, TOL_HERM)?;
    let tr = trace(m).re;
    if (tr - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidModel(format!("fidelity input trace {tr} is not 1")));
    }
    let eig = hermitian_eig(m)?;
    let min = eig.eigenvalues[0];
    if min < -FID_CLAMP * tr {
        return Err(Error::NotPositive { eigenvalue: min, tolerance: FID_CLAMP * tr });
    }
    if min >= 0.0 {
        return Ok(m.clone());
    }
    let clamped = eig.map_spectrum(|x| x.max(0.0));
    let new_tr = trace(&clamped).re.max(1e-300);
    Ok(clamped * C64::new(1.0 / new_tr, 0.0))
}

/// Tr√(√σ ρ √σ) for unit-trace Hermitian σ, ρ; small negative
/// eigenvalues are clamped first.
pub fn fidelity(sigma: &CMat, rho: &CMat) -> Result<f64> {
    let s = clamped_unit(sigma)?;
    let r = clamped_unit(rho)?;
    let sq = psd_sqrt(&s)?;
    let mut inner = sq.dot(&r).dot(&sq);
    // roundoff symmetrization before the eigensolve
    let herm = (&inner + &inner.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
    inner = herm;
    let eig = hermitian_eig(&inner)?;
    Ok(eig.eigenvalues.iter().map(|&x| x.max(0.0).sqrt()).sum())
}

/// Fidelity between the oracle state and the renormalized partial sum
/// Σ_{n≤k} ρ̂^(n)/𝒩_k; returns the raw value (not clamped to [0,1]).
pub fn truncated_fidelity(rho_exact: &CMat, estimate: &ExpansionEstimate, k: usize) -> Result<f64> {
    let partial = estimate.partial_state(k)?;
    let nk = trace(&partial).re;
    // strongly decohering unresummed expansions have tiny but
    // meaningful partial weights; only reject true numerical zeros
    const MIN_PARTIAL_WEIGHT: f64 = 1e-250;
    if nk <= MIN_PARTIAL_WEIGHT {
        return Err(Error::VanishingWeight { trace: nk, cutoff: MIN_PARTIAL_WEIGHT });
    }
    let normalized = partial * C64::new(1.0 / nk, 0.0);
    fidelity(rho_exact, &normalized)
}

/// Per-order weight curves w_n(t) over a time grid: one expansion
/// estimate per grid point.
#[derive(Debug, Clone)]
pub struct WeightSeries {
    pub times: Vec<f64>,
    /// weights[i][n]: order-n weight at times[i].
    pub weights: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
}

impl WeightSeries {
    /// Long-format CSV: time, order, weight, stderr.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,order,weight,stderr\n");
        for (i, &t) in self.times.iter().enumerate() {
            for n in 0..self.weights[i].len() {
                let _ = writeln!(out, "{},{},{},{}", t, n, self.weights[i][n], self.stderr[i][n]);
            }
        }
        out
    }
}

pub fn weight_series(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    state0: &BranchState,
    times: &[f64],
    config: &SamplerConfig,
) -> Result<WeightSeries> {
    let mut weights = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for &t in times {
        let est = estimate_expansion(sys, strategy, state0, t, config)?;
        weights.push(est.weights);
        stderr.push(est.weight_stderr);
    }
    Ok(WeightSeries { times: times.to_vec(), weights, stderr })
}

/// Convergence summary of one run: F_k and 𝒲_k against the oracle.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub model: String,
    pub strategy: String,
    pub k_values: Vec<usize>,
    /// F_k clamped to [0, 1]; the raw values live in `fidelity_raw`.
    pub fidelity: Vec<f64>,
    pub fidelity_raw: Vec<f64>,
    pub cum_weight: Vec<f64>,
    /// Statistical scale for the fidelity column, propagated from the
    /// combined weight errors of the included orders.
    pub fidelity_stderr: Vec<f64>,
    /// Combined stderr of 𝒲_k.
    pub weight_stderr: Vec<f64>,
    pub seed: u64,
    pub n_samples: usize,
    pub dt: f64,
    pub tau: f64,
    pub elapsed: f64,
}

impl ConvergenceReport {
    pub fn build(
        rho_exact: &CMat,
        estimate: &ExpansionEstimate,
        model: &str,
        strategy: &str,
        config: &SamplerConfig,
        tau: f64,
    ) -> Result<Self> {
        let kk = estimate.max_order();
        let mut fidelity_raw = Vec::with_capacity(kk + 1);
        let mut fid = Vec::with_capacity(kk + 1);
        let mut cum_weight = Vec::with_capacity(kk + 1);
        let mut weight_stderr = Vec::with_capacity(kk + 1);
        let mut acc_w = 0.0;
        let mut acc_var = 0.0;
        for k in 0..=kk {
            let f = truncated_fidelity(rho_exact, estimate, k)?;
            fidelity_raw.push(f);
            fid.push(f.clamp(0.0, 1.0));
            acc_w += estimate.weights[k];
            acc_var += estimate.weight_stderr[k].powi(2);
            cum_weight.push(acc_w);
            weight_stderr.push(acc_var.sqrt());
        }
        Ok(ConvergenceReport {
            model: model.to_string(),
            strategy: strategy.to_string(),
            k_values: (0..=kk).collect(),
            fidelity: fid,
            fidelity_raw,
            cum_weight,
            fidelity_stderr: weight_stderr.clone(),
            weight_stderr,
            seed: config.seed,
            n_samples: config.n_samples,
            dt: config.dt,
            tau,
            elapsed: estimate.elapsed,
        })
    }

    fn metadata_json(&self) -> String {
        serde_json::json!({
            "model": self.model,
            "strategy": self.strategy,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "dt": self.dt,
            "tau": self.tau,
            "fidelity_raw": self.fidelity_raw,
        })
        .to_string()
    }

    /// CSV with a one-line JSON metadata header; the column names are a
    /// stable interface for plotting consumers.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.metadata_json());
        out.push_str("k,fidelity,cum_weight,fidelity_stderr,weight_stderr\n");
        for (i, &k) in self.k_values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                k, self.fidelity[i], self.cum_weight[i], self.fidelity_stderr[i],
                self.weight_stderr[i]
            );
        }
        out
    }

    /// Combined CSV for several strategies sharing one oracle.
    pub fn combined_csv(reports: &[ConvergenceReport]) -> String {
        let mut out = String::new();
        for r in reports {
            let _ = writeln!(out, "# {}", r.metadata_json());
        }
        out.push_str("strategy,k,fidelity,cum_weight,fidelity_stderr,weight_stderr\n");
        for r in reports {
            for (i, &k) in r.k_values.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.strategy, k, r.fidelity[i], r.cum_weight[i], r.fidelity_stderr[i],
                    r.weight_stderr[i]
                );
            }
        }
        out
    }
}
