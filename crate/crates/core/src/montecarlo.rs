//! Monte Carlo estimation of the jump-time multi-integrals: per-order
//! accumulators over sampled jump-time tuples, with exact enumeration or
//! importance sampling of the jump index tuples.
//!
//! Determinism contract: every (order, sample) pair owns a counter-based
//! RNG substream, samples are merged in sample order regardless of how
//! they were scheduled, so identical (seed, config) produce bit-identical
//! output for any worker count.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expansion::{evaluate_record, BranchState, JumpRecord, ResummationStrategy};
use crate::linalg::{trace, CMat, ZERO};
use crate::model::OpenSystem;
use crate::propagator::RateDensity;

/// Jump-time proposal distribution; one iid draw per jump, then sorted.
#[derive(Clone)]
pub enum TimeDistribution {
    Uniform,
    RateWeighted(RateDensity),
}

/// Sampler parameters shared by all orders of one estimation run.
#[derive(Clone)]
pub struct SamplerConfig {
    /// Samples per order (orders ≥ 1; order 0 is deterministic).
    pub n_samples: usize,
    /// Highest expansion order K.
    pub max_order: usize,
    pub seed: u64,
    pub time_distribution: TimeDistribution,
    /// Integrator step for branch evolution.
    pub dt: f64,
    /// Enumerate index tuples exactly while J^n stays at or below this.
    pub index_enum_cap: usize,
    /// Worker threads; 0 uses the ambient thread pool.
    pub workers: usize,
}

impl SamplerConfig {
    pub fn new(n_samples: usize, max_order: usize, seed: u64, dt: f64) -> Self {
        SamplerConfig {
            n_samples,
            max_order,
            seed,
            time_distribution: TimeDistribution::Uniform,
            dt,
            index_enum_cap: 256,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidModel("n_samples must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidModel(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

fn splitmix64(z: &mut u64) -> u64 {
    *z = z.wrapping_add(0x9E3779B97F4A7C15);
    let mut x = *z;
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Independent substream keyed by (seed, tags): the key schedule mixes
/// all four words, so distinct tags give unrelated streams.
pub fn stream_rng(seed: u64, tags: [u64; 3]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6A09E667F3BCC908;
    let mut key = [0u8; 32];
    for (i, word) in [seed, tags[0], tags[1], tags[2]].into_iter().enumerate() {
        state ^= word.wrapping_mul(0x9E3779B97F4A7C15);
        let mixed = splitmix64(&mut state);
        key[8 * i..8 * (i + 1)].copy_from_slice(&mixed.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Draw n iid jump times from the proposal, sorted ascending; the
/// returned density is n!·∏p(t_j), the density of the sorted tuple.
pub fn sample_jump_times(
    n: usize,
    t: f64,
    dist: &TimeDistribution,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let mut times = Vec::with_capacity(n);
    let mut p = factorial(n);
    for _ in 0..n {
        match dist {
            TimeDistribution::Uniform => {
                times.push(rng.gen::<f64>() * t);
                p /= t;
            }
            TimeDistribution::RateWeighted(d) => {
                let ti = d.sample(rng.gen::<f64>());
                p *= d.pdf(ti).max(1e-300);
                times.push(ti);
            }
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (times, p)
}

/// All J^n index tuples, or None when the count exceeds the cap.
pub fn enumerate_tuples(n_ops: usize, order: usize, cap: usize) -> Option<Vec<Vec<usize>>> {
    let count = (n_ops as f64).powi(order as i32);
    if count > cap as f64 {
        return None;
    }
    let mut tuples = vec![vec![0usize; order]];
    for slot in 0..order {
        let mut next = Vec::with_capacity(tuples.len() * n_ops);
        for t in &tuples {
            for j in 0..n_ops {
                let mut u = t.clone();
                u[slot] = j;
                next.push(u);
            }
        }
        tuples = next;
    }
    Some(tuples)
}

/// Importance sampler over jump index tuples: per-slot probabilities
/// proportional to Tr[L_j†L_j], blended with a uniform floor so shifted
/// contributions of weak operators stay reachable; the reweighting keeps
/// the estimator unbiased for any support-covering proposal.
pub struct IndexSampler {
    cum: Vec<f64>,
    inv_prob: Vec<f64>,
}

impl IndexSampler {
    pub fn new(sys: &OpenSystem) -> Self {
        let n = sys.num_jumps();
        let rates: Vec<f64> =
            sys.jump_ops().iter().map(|l| l.iter().map(|z| z.norm_sqr()).sum()).collect();
        let total: f64 = rates.iter().sum();
        let uniform = 1.0 / n as f64;
        let probs: Vec<f64> = if total > 0.0 {
            rates.iter().map(|&r| 0.9 * r / total + 0.1 * uniform).collect()
        } else {
            vec![uniform; n]
        };
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        IndexSampler { cum, inv_prob: probs.iter().map(|&p| 1.0 / p).collect() }
    }

    fn sample_slot(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        match self.cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(self.cum.len() - 1),
            Err(i) => i,
        }
    }

    /// One tuple plus the inverse of its proposal probability.
    pub fn sample_tuple(&self, order: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
        let mut tuple = Vec::with_capacity(order);
        let mut inv_q = 1.0;
        for _ in 0..order {
            let j = self.sample_slot(rng);
            inv_q *= self.inv_prob[j];
            tuple.push(j);
        }
        (tuple, inv_q)
    }
}

/// One estimated expansion order.
#[derive(Debug, Clone)]
pub struct OrderEstimate {
    /// Unnormalized ρ̂^(n).
    pub state: CMat,
    /// ŵ_n = Tr ρ̂^(n).
    pub weight: f64,
    pub weight_stderr: f64,
    pub samples: usize,
}

/// Unbiased estimator of the n-jump term at time t.
pub fn estimate_order(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    state0: &BranchState,
    n: usize,
    t: f64,
    config: &SamplerConfig,
) -> Result<OrderEstimate> {
    config.validate()?;
    let dim = sys.dim();
    if n == 0 {
        let branch = evaluate_record(sys, strategy, state0, &JumpRecord::new(), t, config.dt)?;
        let state =
            if branch.dead { CMat::from_elem((dim, dim), ZERO) } else { branch.state.density() };
        let weight = trace(&state).re;
        return Ok(OrderEstimate { state, weight, weight_stderr: 0.0, samples: 1 });
    }
    if t <= 0.0 {
        return Ok(OrderEstimate {
            state: CMat::from_elem((dim, dim), ZERO),
            weight: 0.0,
            weight_stderr: 0.0,
            samples: config.n_samples,
        });
    }

    let tuples = enumerate_tuples(sys.num_jumps(), n, config.index_enum_cap);
    let sampler = IndexSampler::new(sys);

    let eval_sample = |s: usize| -> Result<(CMat, f64)> {
        let mut rng = stream_rng(config.seed, [n as u64, s as u64, 0]);
        let (times, p) = sample_jump_times(n, t, &config.time_distribution, &mut rng);
        let mut acc = CMat::from_elem((dim, dim), ZERO);
        let mut run_tuple = |tuple: &[usize], reweight: f64| -> Result<()> {
            let rec = JumpRecord::from_events(
                tuple.iter().copied().zip(times.iter().copied()).collect(),
            )?;
            let branch = evaluate_record(sys, strategy, state0, &rec, t, config.dt)?;
            if !branch.dead {
                branch.state.accumulate_density(reweight / p, &mut acc);
            }
            Ok(())
        };
        match &tuples {
            Some(ts) => {
                for tuple in ts {
                    run_tuple(tuple, 1.0)?;
                }
            }
            None => {
                let (tuple, inv_q) = sampler.sample_tuple(n, &mut rng);
                run_tuple(&tuple, inv_q)?;
            }
        }
        let w = trace(&acc).re;
        Ok((acc, w))
    };

    let n_samples = config.n_samples;
    // chunked so large-dimension runs keep a bounded number of per-sample
    // matrices alive at once; merge order is fixed by sample index
    let chunk = (4_000_000 / (16 * dim * dim)).clamp(4, 512);
    let mut sum_state = CMat::from_elem((dim, dim), ZERO);
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut start = 0;
    while start < n_samples {
        let end = (start + chunk).min(n_samples);
        let results: Result<Vec<(CMat, f64)>> =
            (start..end).into_par_iter().map(eval_sample).collect();
        for (m, w) in results? {
            sum_state.zip_mut_with(&m, |a, &b| *a += b);
            sum_w += w;
            sum_w2 += w * w;
        }
        start = end;
    }

    let inv_n = 1.0 / n_samples as f64;
    let mean = sum_w * inv_n;
    let var = if n_samples > 1 {
        ((sum_w2 - n_samples as f64 * mean * mean) / (n_samples as f64 - 1.0)).max(0.0)
    } else {
        0.0
    };
    sum_state.mapv_inplace(|z| z * C64::new(inv_n, 0.0));
    Ok(OrderEstimate {
        state: sum_state,
        weight: mean,
        weight_stderr: (var * inv_n).sqrt(),
        samples: n_samples,
    })
}

/// All orders 0..=K of the expansion at one time.
#[derive(Debug, Clone)]
pub struct ExpansionEstimate {
    pub per_order_states: Vec<CMat>,
    pub weights: Vec<f64>,
    pub weight_stderr: Vec<f64>,
    pub sample_counts: Vec<usize>,
    /// Wall-clock seconds spent estimating.
    pub elapsed: f64,
}

impl ExpansionEstimate {
    pub fn max_order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.per_order_states[0].nrows()
    }

    /// Unnormalized Σ_{n≤k} ρ̂^(n).
    pub fn partial_state(&self, k: usize) -> Result<CMat> {
        if k > self.max_order() {
            return Err(Error::IndexOutOfRange { index: k, count: self.weights.len() });
        }
        let mut out = self.per_order_states[0].clone();
        for m in &self.per_order_states[1..=k] {
            out.zip_mut_with(m, |a, &b| *a += b);
        }
        Ok(out)
    }

    /// Upper bound on the truncated mass, 1 − Σ ŵ_n.
    pub fn residual_weight(&self) -> f64 {
        1.0 - self.weights.iter().sum::<f64>()
    }

    /// CSV: order, weight, stderr, cumulative.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,weight,stderr,cumulative\n");
        let mut cum = 0.0;
        for n in 0..self.weights.len() {
            cum += self.weights[n];
            let _ = writeln!(out, "{},{},{},{}", n, self.weights[n], self.weight_stderr[n], cum);
        }
        out
    }

    /// Binary dump of the per-order matrices and statistics.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let orders = self.weights.len();
        let mut out = Vec::with_capacity(32 + orders * (24 + 16 * dim * dim));
        out.extend_from_slice(b"JXD1");
        out.extend_from_slice(&(orders as u64).to_le_bytes());
        out.extend_from_slice(&(dim as u64).to_le_bytes());
        out.extend_from_slice(&self.elapsed.to_le_bytes());
        for n in 0..orders {
            out.extend_from_slice(&self.weights[n].to_le_bytes());
            out.extend_from_slice(&self.weight_stderr[n].to_le_bytes());
            out.extend_from_slice(&(self.sample_counts[n] as u64).to_le_bytes());
        }
        for m in &self.per_order_states {
            for z in m.iter() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Serialization("malformed expansion dump".into());
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes.get(*pos..*pos + n).ok_or_else(bad)?;
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"JXD1" {
            return Err(bad());
        }
        let read_u64 = |pos: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let read_f64 = |pos: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let orders = read_u64(&mut pos)? as usize;
        let dim = read_u64(&mut pos)? as usize;
        if orders == 0 || dim == 0 || orders > 10_000 || dim > 1_000_000 {
            return Err(bad());
        }
        let elapsed = read_f64(&mut pos)?;
        let mut weights = Vec::with_capacity(orders);
        let mut weight_stderr = Vec::with_capacity(orders);
        let mut sample_counts = Vec::with_capacity(orders);
        for _ in 0..orders {
            weights.push(read_f64(&mut pos)?);
            weight_stderr.push(read_f64(&mut pos)?);
            sample_counts.push(read_u64(&mut pos)? as usize);
        }
        let mut per_order_states = Vec::with_capacity(orders);
        for _ in 0..orders {
            let mut m = CMat::from_elem((dim, dim), ZERO);
            for a in 0..dim {
                for b in 0..dim {
                    let re = read_f64(&mut pos)?;
                    let im = read_f64(&mut pos)?;
                    m[[a, b]] = C64::new(re, im);
                }
            }
            per_order_states.push(m);
        }
        if pos != bytes.len() {
            return Err(bad());
        }
        Ok(ExpansionEstimate { per_order_states, weights, weight_stderr, sample_counts, elapsed })
    }
}

/// Estimate all orders 0..=K.
pub fn estimate_expansion(
    sys: &OpenSystem,
    strategy: &ResummationStrategy,
    state0: &BranchState,
    t: f64,
    config: &SamplerConfig,
) -> Result<ExpansionEstimate> {
    config.validate()?;
    let run = || -> Result<ExpansionEstimate> {
        let start = std::time::Instant::now();
        let mut per_order_states = Vec::with_capacity(config.max_order + 1);
        let mut weights = Vec::with_capacity(config.max_order + 1);
        let mut weight_stderr = Vec::with_capacity(config.max_order + 1);
        let mut sample_counts = Vec::with_capacity(config.max_order + 1);
        for n in 0..=config.max_order {
            let est = estimate_order(sys, strategy, state0, n, t, config)?;
            per_order_states.push(est.state);
            weights.push(est.weight);
            weight_stderr.push(est.weight_stderr);
            sample_counts.push(est.samples);
        }
        Ok(ExpansionEstimate {
            per_order_states,
            weights,
            weight_stderr,
            sample_counts,
            elapsed: start.elapsed().as_secs_f64(),
        })
    };
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidModel(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}

/// Running sums 𝒲_k = w₀ + … + w_k.
pub fn cumulative_weights(est: &ExpansionEstimate) -> Vec<f64> {
    let mut out = Vec::with_capacity(est.weights.len());
    let mut acc = 0.0;
    for &w in &est.weights {
        acc += w;
        out.push(acc);
    }
    out
}
