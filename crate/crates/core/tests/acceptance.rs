//! Acceptance suite: benchmark reproductions and structural properties.
//! Each criterion prints exactly one PASS/FAIL line.

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpexp::analysis::{fidelity, truncated_fidelity, ConvergenceReport};
use jumpexp::expansion::{evaluate_record, BranchState, JumpRecord, ResummationStrategy};
use jumpexp::linalg::{dagger, hermitian_eig, identity, trace, CMat, CVec, ZERO};
use jumpexp::model::{
    apply_deterministic, apply_generator, apply_jump, minimal_rate, partial_jump_rate,
    OpenSystem, ShiftVector, Structure,
};
use jumpexp::models::{
    collisional_decoherence, damped_ho, measurement_feedback, qbm_diffusion, zero_t_oracle,
    CoherentSuperpositionOracle, InitialStateSpec,
};
use jumpexp::montecarlo::{estimate_expansion, estimate_order, SamplerConfig};
use jumpexp::montecarlo::TimeDistribution;
use jumpexp::propagator::{propagate, rate_density};

fn verdict(id: u32, desc: &str, ok: bool, detail: &str) {
    println!("criterion {id:02} ({desc}): {} [{detail}]", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id:02} failed: {detail}");
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> CMat {
    CMat::from_shape_fn((dim, dim), |_| random_c64(rng))
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> CMat {
    let m = random_matrix(rng, dim);
    (&m + &dagger(&m)) * c(0.5, 0.0)
}

/// Random PSD matrix with unit trace.
fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> CMat {
    let m = random_matrix(rng, dim);
    let rho = m.dot(&dagger(&m));
    let tr = trace(&rho).re;
    rho * c(1.0 / tr, 0.0)
}

fn random_system(rng: &mut ChaCha8Rng, dim: usize, n_jumps: usize) -> OpenSystem {
    let h = random_hermitian(rng, dim);
    let jumps: Vec<CMat> = (0..n_jumps).map(|_| random_matrix(rng, dim)).collect();
    let labels = (0..n_jumps).map(|j| format!("L{j}")).collect();
    OpenSystem::new(h, jumps, labels, Structure::Dense).unwrap()
}

fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).norm()).fold(0.0, f64::max)
}

/// Balanced vacuum + coherent(6) superposition in an 80-level space.
fn zero_t_initial(sys: &OpenSystem) -> CVec {
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    InitialStateSpec::CoherentSuperposition {
        betas: vec![[0.0, 0.0], [6.0, 0.0]],
        amplitudes: vec![[inv, 0.0], [inv, 0.0]],
    }
    .build(sys)
    .unwrap()
}

#[test]
fn criterion_01_analytic_zero_temperature_oracle() {
    let start = std::time::Instant::now();
    let fock_dim = 80;
    let sys = damped_ho(2.0, 1.0, 0.0, fock_dim).unwrap();
    let inv = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let oracle =
        CoherentSuperpositionOracle::normalized(c(0.0, 0.0), c(6.0, 0.0), inv, inv, 1.0, 2.0)
            .unwrap();
    let tau = 2.0;
    let rho0 = zero_t_oracle(&oracle, 0.0, fock_dim).unwrap();
    let analytic = zero_t_oracle(&oracle, tau, fock_dim).unwrap();
    let numeric = propagate(&sys, &rho0, tau, 0.001, 200).unwrap();
    let f = fidelity(&analytic, numeric.final_state()).unwrap();
    let ok = f >= 1.0 - 1e-5;
    verdict(
        1,
        "analytic damped-oscillator oracle vs reference propagation",
        ok,
        &format!("fidelity {f:.8}, dim {fock_dim}, {:.1}s", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_02_thermal_oscillator_convergence() {
    let start = std::time::Instant::now();
    let sys = damped_ho(2.0, 1.0, 0.5, 32).unwrap();
    let psi = InitialStateSpec::FockKets { kets: vec![19, 18, 17, 16], amplitudes: None }
        .build(&sys)
        .unwrap();
    let state0 = BranchState::Pure(psi);
    let tau = 6.0;
    let oracle = propagate(&sys, &state0.density(), tau, 0.01, 200).unwrap();

    let mut cfg_opt = SamplerConfig::new(10_000, 19, 1, 0.03);
    cfg_opt.index_enum_cap = 16;
    let est_opt =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, tau, &cfg_opt).unwrap();
    let f3_opt = truncated_fidelity(oracle.final_state(), &est_opt, 3).unwrap();

    // without the resummation almost all weight sits at high orders,
    // so jump times are importance-sampled from the decay profile
    let mut cfg_ns = SamplerConfig::new(10_000, 19, 1, 0.03);
    cfg_ns.time_distribution = TimeDistribution::RateWeighted(rate_density(&oracle));
    let est_ns =
        estimate_expansion(&sys, &ResummationStrategy::NoShift, &state0, tau, &cfg_ns).unwrap();
    let f3_ns = truncated_fidelity(oracle.final_state(), &est_ns, 3).unwrap();
    let f19_ns = truncated_fidelity(oracle.final_state(), &est_ns, 19).unwrap();

    let ok = f3_opt >= 0.90 && f3_ns <= 0.85 && f19_ns >= 0.90;
    verdict(
        2,
        "thermal oscillator: resummed converges by order 3, unshifted needs ~19",
        ok,
        &format!(
            "resummed F3 {f3_opt:.4}; unshifted F3 {f3_ns:.4}, F19 {f19_ns:.4}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_zero_temperature_convergence() {
    let start = std::time::Instant::now();
    let sys = damped_ho(2.0, 1.0, 0.0, 80).unwrap();
    let state0 = BranchState::Pure(zero_t_initial(&sys));
    let tau = 2.0;
    let oracle = propagate(&sys, &state0.density(), tau, 0.001, 100).unwrap();

    let mut cfg_opt = SamplerConfig::new(10_000, 19, 1, 0.015);
    cfg_opt.index_enum_cap = 16;
    let est_opt =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, tau, &cfg_opt).unwrap();
    let mut cfg_ns = SamplerConfig::new(10_000, 19, 1, 0.015);
    cfg_ns.time_distribution = TimeDistribution::RateWeighted(rate_density(&oracle));
    let est_ns =
        estimate_expansion(&sys, &ResummationStrategy::NoShift, &state0, tau, &cfg_ns).unwrap();

    let f_opt: Vec<f64> = (0..=19)
        .map(|k| truncated_fidelity(oracle.final_state(), &est_opt, k).unwrap())
        .collect();
    let f_ns: Vec<f64> = (0..=19)
        .map(|k| truncated_fidelity(oracle.final_state(), &est_ns, k).unwrap())
        .collect();

    let early_ns_stays_low = f_ns[..15].iter().all(|&f| f < 0.90);
    let min_opt = f_opt.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_ns = f_ns.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = f_opt[3] >= 0.90
        && f_ns[3] < f_opt[3]
        && early_ns_stays_low
        && min_opt >= 0.45
        && min_ns >= 0.45;
    verdict(
        3,
        "zero-temperature cat state: resummed fast, unshifted slow but never collapses",
        ok,
        &format!(
            "resummed F3 {:.4} (min {:.3}); unshifted F3 {:.4} (min {:.3}, first k with F>=0.9: {}); {:.0}s",
            f_opt[3],
            min_opt,
            f_ns[3],
            min_ns,
            f_ns.iter().position(|&f| f >= 0.90).map(|k| k as i64).unwrap_or(-1),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_04_position_diffusion_convergence() {
    let start = std::time::Instant::now();
    let sys = qbm_diffusion(1.0, 1.0, None, 256, 40.0).unwrap();
    let psi = InitialStateSpec::Gaussian { x0: 0.0, sigma_x: 3.0, k0: 2.0 }.build(&sys).unwrap();
    let state0 = BranchState::Pure(psi);
    let tau = 1.0 / 3.0;
    let oracle = propagate(&sys, &state0.density(), tau, 0.001, 50).unwrap();

    let cfg = SamplerConfig::new(4000, 5, 1, 1.0 / 300.0);
    let est_opt =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, tau, &cfg).unwrap();
    let est_ns =
        estimate_expansion(&sys, &ResummationStrategy::NoShift, &state0, tau, &cfg).unwrap();
    let f5_opt = truncated_fidelity(oracle.final_state(), &est_opt, 5).unwrap();
    let f5_ns = truncated_fidelity(oracle.final_state(), &est_ns, 5).unwrap();
    let w5_opt: f64 = est_opt.weights.iter().sum();
    let w5_ns: f64 = est_ns.weights.iter().sum();

    // Dissipationless diffusion has no pointer basis to settle into: the
    // conditioned branches keep collapsing and re-spreading, so the truncated
    // fidelity plateaus below 1 at low order for both strategies, with the
    // shifted expansion well ahead. Unshifted low-order branches collapse
    // around x = 0 instead of tracking the packet, so they carry weight but
    // the wrong state.
    let ok = f5_opt >= 0.68 && f5_ns <= 0.70 && f5_opt >= f5_ns + 0.10 && w5_opt >= 0.2;
    verdict(
        4,
        "position diffusion: resummed fidelity leads at order 5",
        ok,
        &format!(
            "resummed F5 {f5_opt:.4} W5 {w5_opt:.3}; unshifted F5 {f5_ns:.4} W5 {w5_ns:.2e}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_collisional_decoherence_weights() {
    let start = std::time::Instant::now();
    let sys = collisional_decoherence(1.0, 1.0, None, 128, 36.0, 21).unwrap();
    let psi = InitialStateSpec::Gaussian { x0: 0.0, sigma_x: 3.0, k0: 0.0 }.build(&sys).unwrap();
    let state0 = BranchState::Pure(psi);
    let tau = 20.0;
    let oracle = propagate(&sys, &state0.density(), tau, 0.02, 200).unwrap();

    let mut cfg_opt = SamplerConfig::new(2000, 6, 1, 0.1);
    cfg_opt.index_enum_cap = 16;
    let est_opt =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, tau, &cfg_opt).unwrap();
    let w4_opt: f64 = est_opt.weights[..=4].iter().sum();
    let f6_opt = truncated_fidelity(oracle.final_state(), &est_opt, 6).unwrap();

    let cfg_ns = SamplerConfig::new(4000, 13, 1, 0.1);
    let est_ns =
        estimate_expansion(&sys, &ResummationStrategy::NoShift, &state0, tau, &cfg_ns).unwrap();
    let w4_ns: f64 = est_ns.weights[..=4].iter().sum();
    let f13_ns = truncated_fidelity(oracle.final_state(), &est_ns, 13).unwrap();

    // The unshifted low-order weights sit at the Poisson(γτ) tail while the
    // shifted ones are orders of magnitude larger, yet the unshifted fidelity
    // still climbs quickly: the fidelity/weight divergence this model is
    // known for.
    let ok = f6_opt >= 0.90 && w4_opt >= 100.0 * w4_ns && w4_ns <= 0.30 && f13_ns >= 0.90;
    verdict(
        5,
        "collisional decoherence: weight concentration vs fidelity/weight divergence",
        ok,
        &format!(
            "resummed F6 {f6_opt:.4} W4 {w4_opt:.2e}; unshifted W4 {w4_ns:.2e}, F13 {f13_ns:.4}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_measurement_feedback() {
    let start = std::time::Instant::now();
    let d = 19;
    let sys = measurement_feedback(d, &[0, 10], 1.0, 0.5, 22).unwrap();
    let psi = InitialStateSpec::FockKets { kets: vec![d], amplitudes: None }.build(&sys).unwrap();
    let state0 = BranchState::Pure(psi);
    let tau = 40.0;
    let oracle = propagate(&sys, &state0.density(), tau, 0.02, 500).unwrap();

    let mut cfg = SamplerConfig::new(2000, 2, 1, 0.1);
    cfg.index_enum_cap = 16;
    let est =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, tau, &cfg).unwrap();
    let f2 = truncated_fidelity(oracle.final_state(), &est, 2).unwrap();

    // the + outcome of the first basis annihilates the top ladder state
    let j_plus = sys.labels().iter().position(|l| l.starts_with("M+0")).unwrap();
    let top = state0.density();
    let zero_shift = ShiftVector::zero(sys.num_jumps());
    let p_top = partial_jump_rate(&sys, &zero_shift, j_plus, &top).unwrap();

    let ok = f2 >= 0.90 && p_top <= 1e-12;
    verdict(
        6,
        "measurement with feedback: converges by order 2, dark outcome exactly dark",
        ok,
        &format!("F2 {f2:.4}; dark rate {p_top:.2e}; {:.0}s", start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_07_generator_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1A2B);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let sys = random_system(&mut rng, 4, 2);
        let rho = random_hermitian(&mut rng, 4);
        let alpha = ShiftVector::new(vec![random_c64(&mut rng), random_c64(&mut rng)]);
        let direct = apply_generator(&sys, &rho).unwrap();
        let mut decomposed = apply_deterministic(&sys, &alpha, &rho).unwrap();
        for j in 0..2 {
            decomposed = decomposed + apply_jump(&sys, &alpha, j, &rho).unwrap();
        }
        let scale = direct.iter().map(|z| z.norm()).fold(1.0, f64::max);
        worst = worst.max(max_abs_diff(&direct, &decomposed) / scale);
    }
    let ok = worst <= 1e-11;
    verdict(
        7,
        "generator invariant under jump-operator shifts, 1000 random triples",
        ok,
        &format!("worst relative deviation {worst:.2e}"),
    );
}

#[test]
fn criterion_08_rate_minimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51AB);
    let dim = 6;
    let sys = random_system(&mut rng, dim, 1);
    let mut violations = 0usize;
    let mut worst_gap = 0.0f64;
    for _ in 0..1000 {
        let rho = random_state(&mut rng, dim);
        let floor = minimal_rate(&sys, 0, &rho).unwrap();
        for _ in 0..100 {
            let alpha = ShiftVector::new(vec![random_c64(&mut rng)]);
            let rate = partial_jump_rate(&sys, &alpha, 0, &rho).unwrap();
            if floor > rate + 1e-12 {
                violations += 1;
                worst_gap = worst_gap.max(floor - rate);
            }
        }
    }
    // eigenstates of a normal jump operator have vanishing minimal rate
    let diag: Vec<C64> = (0..dim).map(|_| random_c64(&mut rng)).collect();
    let l = CMat::from_diag(&Array1::from_vec(diag.clone()));
    let eigen_sys = OpenSystem::new(
        identity(dim) * ZERO,
        vec![l],
        vec!["diag".into()],
        Structure::Dense,
    )
    .unwrap();
    let mut worst_eigen = 0.0f64;
    for k in 0..dim {
        let mut rho = CMat::from_elem((dim, dim), ZERO);
        rho[[k, k]] = c(1.0, 0.0);
        let r = minimal_rate(&eigen_sys, 0, &rho).unwrap();
        worst_eigen = worst_eigen.max(r / (diag[k].norm_sqr() + 1.0));
    }
    let ok = violations == 0 && worst_eigen <= 1e-10;
    verdict(
        8,
        "minimal rate is a lower bound and vanishes on jump eigenstates",
        ok,
        &format!("{violations} violations (worst gap {worst_gap:.2e}); eigenstate rate {worst_eigen:.2e}"),
    );
}

#[test]
fn criterion_09_weight_axioms() {
    let sys = damped_ho(2.0, 1.0, 0.5, 16).unwrap();
    let psi = InitialStateSpec::FockKets { kets: vec![8], amplitudes: None }.build(&sys).unwrap();
    let state0 = BranchState::Pure(psi);
    let cfg = SamplerConfig::new(2000, 6, 5, 0.02);

    let at_zero =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, 0.0, &cfg).unwrap();
    let delta_ok = at_zero.weights[0] == 1.0 && at_zero.weights[1..].iter().all(|&w| w == 0.0);

    let est =
        estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, 1.5, &cfg).unwrap();
    let nonneg = est.weights.iter().all(|&w| w >= 0.0);
    let total: f64 = est.weights.iter().sum();
    let noise: f64 = est.weight_stderr.iter().map(|e| e * e).sum::<f64>().sqrt();
    let bounded = total <= 1.0 + 3.0 * noise;

    let ok = delta_ok && nonneg && bounded;
    verdict(
        9,
        "weights: delta at time zero, non-negative, total bounded by one",
        ok,
        &format!("t=0 delta {delta_ok}; total {total:.4} (noise {noise:.1e})"),
    );
}

#[test]
fn criterion_10_monte_carlo_vs_quadrature() {
    // two-level decay with a thermal up-jump so order 2 is nonzero
    let sys = damped_ho(1.0, 1.0, 0.5, 2).unwrap();
    let mut psi = CVec::from_elem(2, ZERO);
    psi[1] = c(1.0, 0.0);
    let state0 = BranchState::Pure(psi);
    let strategy = ResummationStrategy::NoShift;
    let t = 1.0;
    let dt = 0.01;

    // trapezoid over the jump time of every one-jump record
    let nodes = 400;
    let mut quad1 = CMat::from_elem((2, 2), ZERO);
    for j in 0..2 {
        for i in 0..=nodes {
            let t1 = t * i as f64 / nodes as f64;
            let rec = JumpRecord::from_events(vec![(j, t1)]).unwrap();
            let b = evaluate_record(&sys, &strategy, &state0, &rec, t, dt).unwrap();
            let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
            b.state.accumulate_density(w * t / nodes as f64, &mut quad1);
        }
    }
    // triangle rule over ordered pairs for the two-jump term
    let g = 80;
    let mut quad2 = CMat::from_elem((2, 2), ZERO);
    let cell = (t / g as f64) * (t / g as f64);
    for j1 in 0..2usize {
        for j2 in 0..2usize {
            for i1 in 0..g {
                let t1 = t * (i1 as f64 + 0.5) / g as f64;
                for i2 in i1..g {
                    let t2 = t * (i2 as f64 + 0.5) / g as f64;
                    if t2 < t1 {
                        continue;
                    }
                    let rec = JumpRecord::from_events(vec![(j1, t1), (j2, t2)]).unwrap();
                    let b = evaluate_record(&sys, &strategy, &state0, &rec, t, dt).unwrap();
                    let scale = if i1 == i2 { 0.5 } else { 1.0 };
                    b.state.accumulate_density(scale * cell, &mut quad2);
                }
            }
        }
    }

    let cfg = SamplerConfig::new(10_000, 2, 17, dt);
    let est1 = estimate_order(&sys, &strategy, &state0, 1, t, &cfg).unwrap();
    let est2 = estimate_order(&sys, &strategy, &state0, 2, t, &cfg).unwrap();

    let trace_distance = |a: &CMat, b: &CMat| -> f64 {
        let eig = hermitian_eig(&(a - b)).unwrap();
        0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>()
    };
    let d1 = trace_distance(&est1.state, &quad1);
    let d2 = trace_distance(&est2.state, &quad2);
    let close = d1 <= 3.0 * est1.weight_stderr.max(1e-4) && d2 <= 3.0 * est2.weight_stderr.max(1e-4);

    // stderr should shrink like the inverse square root of the sample count
    let small = estimate_order(&sys, &strategy, &state0, 1, t, &SamplerConfig::new(1000, 2, 23, dt))
        .unwrap();
    let large = estimate_order(&sys, &strategy, &state0, 1, t, &SamplerConfig::new(9000, 2, 23, dt))
        .unwrap();
    let ratio = small.weight_stderr / large.weight_stderr;
    let scaling_ok = ratio > 1.5 && ratio < 6.0;

    let ok = close && scaling_ok;
    verdict(
        10,
        "sampled jump integrals match quadrature; error scales like 1/sqrt(N)",
        ok,
        &format!(
            "order-1 distance {d1:.2e} (stderr {:.2e}), order-2 {d2:.2e} (stderr {:.2e}), stderr ratio {ratio:.2} (expect 3)",
            est1.weight_stderr, est2.weight_stderr
        ),
    );
}

#[test]
fn criterion_11_worker_count_determinism() {
    let sys = damped_ho(2.0, 1.0, 0.5, 8).unwrap();
    let psi = InitialStateSpec::FockKets { kets: vec![4], amplitudes: None }.build(&sys).unwrap();
    let state0 = BranchState::Pure(psi);
    let oracle = propagate(&sys, &state0.density(), 1.0, 0.005, 100).unwrap();

    let mut csvs = Vec::new();
    for workers in [1usize, 3] {
        let mut cfg = SamplerConfig::new(500, 4, 9, 0.01);
        cfg.workers = workers;
        let est =
            estimate_expansion(&sys, &ResummationStrategy::Optimal, &state0, 1.0, &cfg).unwrap();
        let report = ConvergenceReport::build(
            oracle.final_state(),
            &est,
            "thermal_oscillator",
            "optimal",
            &cfg,
            1.0,
        )
        .unwrap();
        csvs.push((est.to_csv(), report.to_csv()));
    }
    let ok = csvs[0] == csvs[1];
    verdict(
        11,
        "identical seed gives byte-identical reports for any worker count",
        ok,
        if ok { "1 vs 3 workers identical" } else { "outputs diverged" },
    );
}

#[test]
fn criterion_12_pure_branches_stay_rank_one() {
    let sys = damped_ho(2.0, 1.0, 0.5, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let mut psi = CVec::from_shape_fn(12, |_| random_c64(&mut rng));
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
    psi.mapv_inplace(|z| z / c(norm.sqrt(), 0.0));
    let rho0 = {
        let mut m = CMat::from_elem((12, 12), ZERO);
        for (a, &x) in psi.iter().enumerate() {
            for (b, &y) in psi.iter().enumerate() {
                m[[a, b]] = x * y.conj();
            }
        }
        m
    };
    let strategy =
        ResummationStrategy::Fixed(ShiftVector::new(vec![c(0.3, -0.1), c(0.2, 0.05)]));
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let len = rng.gen_range(0..=4);
        let mut times: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.5)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let events: Vec<(usize, f64)> =
            times.into_iter().map(|t| (rng.gen_range(0..2usize), t)).collect();
        let rec = JumpRecord::from_events(events).unwrap();
        let b = evaluate_record(&sys, &strategy, &BranchState::Mixed(rho0.clone()), &rec, 1.5, 0.001)
            .unwrap();
        if b.weight() == 0.0 {
            continue;
        }
        if let BranchState::Mixed(rho) = &b.state {
            let eig = hermitian_eig(rho).unwrap();
            let top = eig.eigenvalues[11];
            let second = eig.eigenvalues[10].abs();
            worst = worst.max(second / top);
        }
    }
    let ok = worst <= 1e-8;
    verdict(
        12,
        "pure starting states keep every branch rank one",
        ok,
        &format!("worst relative second eigenvalue {worst:.2e}"),
    );
}

#[test]
fn pure_and_mixed_sampling_agree() {
    // same record evaluated from a ket and from its density matrix
    let sys = damped_ho(2.0, 1.0, 0.5, 8).unwrap();
    let psi = InitialStateSpec::FockKets { kets: vec![4, 2], amplitudes: None }
        .build(&sys)
        .unwrap();
    let rho = BranchState::Pure(psi.clone()).density();
    let rec = JumpRecord::from_events(vec![(0, 0.3), (1, 0.9)]).unwrap();
    let a = evaluate_record(
        &sys,
        &ResummationStrategy::Optimal,
        &BranchState::Pure(psi),
        &rec,
        1.2,
        0.005,
    )
    .unwrap();
    let b = evaluate_record(
        &sys,
        &ResummationStrategy::Optimal,
        &BranchState::Mixed(rho),
        &rec,
        1.2,
        0.005,
    )
    .unwrap();
    let mut da = CMat::from_elem((8, 8), ZERO);
    let mut db = CMat::from_elem((8, 8), ZERO);
    a.state.accumulate_density(1.0, &mut da);
    b.state.accumulate_density(1.0, &mut db);
    assert!(max_abs_diff(&da, &db) < 1e-8);
}
