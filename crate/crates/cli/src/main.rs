//! Batch experiment driver: parse a config, build the model, run the
//! reference propagation and the jump-expansion estimate, emit reports.
//!
//! Exit codes: 2 for config problems, 3 for numerical aborts during the
//! run, 1 for I/O trouble.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use jumpexp::analysis::ConvergenceReport;
use jumpexp::expansion::{BranchState, ResummationStrategy};
use jumpexp::expansion::PerOrderGrid;
use jumpexp::model::{OpenSystem, ShiftVector};
use jumpexp::models::{catalog, InitialStateSpec, ModelSpec};
use jumpexp::montecarlo::{estimate_expansion, SamplerConfig, TimeDistribution};
use jumpexp::propagator::{propagate, rate_density, PropagationResult};
use jumpexp::{CMat, Error};

const OUTPUT_DIR_ENV: &str = "JUMPEXP_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "jumpexp", version, about = "Jump-expansion simulation driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory (and the env var).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads for the sampler; 0 uses all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run several resummation strategies against one shared oracle.
    Compare {
        config: PathBuf,
        /// Comma-separated strategy names, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the model catalog.
    ListModels {
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
    /// Re-run an experiment from an emitted manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

/// One experiment: model, strategy, horizon, sampler, initial state.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    model: ModelSpec,
    strategy: StrategySpec,
    /// Final time of the expansion.
    tau: f64,
    sampler: SamplerSpec,
    initial_state: InitialStateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    report: ReportSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StrategySpec {
    name: String,
    /// Fixed strategy only: one [re, im] pair per jump operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<Vec<[f64; 2]>>,
    /// Per-order strategy only: nodes of the precomputed shift grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_times: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SamplerSpec {
    n_samples: usize,
    max_order: usize,
    seed: u64,
    dt: f64,
    /// "uniform" (default) or "rate_weighted".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_distribution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index_enum_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ReportSpec {
    /// Step for the reference integrator; defaults to the sampler dt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oracle_dt: Option<f64>,
}

/// Everything needed to reproduce a run bit-identically, plus wall
/// clock and versions for the record.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: String,
    config: RunConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    strategies: Vec<String>,
    versions: serde_json::Value,
    wall_clock_seconds: f64,
}

enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
            CliError::Io(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

/// Errors raised mid-run that mean the numerics gave up, not that the
/// config was malformed.
fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::StepTooLarge { .. }
            | Error::TruncationTooSmall { .. }
            | Error::PositivityViolation { .. }
            | Error::NonFinite { .. }
            | Error::VanishingWeight { .. }
            | Error::GridTooCoarse { .. }
            | Error::GridRangeError { .. }
            | Error::NotPositive { .. }
            | Error::NotHermitian { .. }
            | Error::Lapack { .. }
    )
}

fn run_err(e: Error) -> CliError {
    if is_numerical(&e) {
        CliError::Numerical(format!("numerical abort: {e}"))
    } else {
        CliError::Config(format!("{e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, output_dir, workers } => {
            load_config(&config).and_then(|cfg| execute_run(cfg, output_dir, workers))
        }
        Command::Compare { config, strategies, output_dir, workers } => load_config(&config)
            .and_then(|cfg| execute_compare(cfg, &strategies, output_dir, workers)),
        Command::ListModels { json } => {
            list_models(json);
            Ok(())
        }
        Command::Replay { manifest, output_dir } => execute_replay(&manifest, output_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn list_models(json: bool) {
    if json {
        let entries: Vec<serde_json::Value> = catalog()
            .into_iter()
            .map(|(name, params)| serde_json::json!({ "name": name, "params": params }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&entries).unwrap());
    } else {
        for (name, params) in catalog() {
            println!("{name}: {params}");
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &RunConfig) -> Result<(), CliError> {
    if !(cfg.tau > 0.0) {
        return Err(CliError::Config(format!("tau must be positive, got {}", cfg.tau)));
    }
    let known =
        ["no_shift", "fixed", "optimal", "piecewise_constant", "index_conditioned", "per_order"];
    if !known.contains(&cfg.strategy.name.as_str()) {
        return Err(CliError::Config(format!(
            "unknown strategy {:?}; known: {}",
            cfg.strategy.name,
            known.join(", ")
        )));
    }
    if cfg.strategy.name == "fixed" && cfg.strategy.shift.is_none() {
        return Err(CliError::Config("fixed strategy needs a shift array".into()));
    }
    if let Some(dist) = &cfg.sampler.time_distribution {
        if dist != "uniform" && dist != "rate_weighted" {
            return Err(CliError::Config(format!(
                "unknown time distribution {dist:?}; known: uniform, rate_weighted"
            )));
        }
    }
    // fail before any artifact is written
    cfg.model.build().map_err(|e| CliError::Config(format!("model: {e}")))?;
    Ok(())
}

/// Precedence: command-line flag, then env var, then config, then ./out.
fn resolve_output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn sampler_config(cfg: &RunConfig, workers: Option<usize>) -> SamplerConfig {
    let s = &cfg.sampler;
    let mut out = SamplerConfig::new(s.n_samples, s.max_order, s.seed, s.dt);
    if let Some(cap) = s.index_enum_cap {
        out.index_enum_cap = cap;
    }
    out.workers = workers.or(s.workers).unwrap_or(0);
    out
}

struct Prepared {
    sys: OpenSystem,
    state0: BranchState,
    oracle: PropagationResult,
    sampler: SamplerConfig,
    outdir: PathBuf,
}

/// Build the system and initial state, run the reference propagation
/// once, and finalize the sampler (the rate-weighted time distribution
/// needs the oracle's rate profile).
fn prepare(
    cfg: &RunConfig,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<Prepared, CliError> {
    let sys = cfg.model.build().map_err(|e| CliError::Config(format!("model: {e}")))?;
    let psi = cfg
        .initial_state
        .build(&sys)
        .map_err(|e| CliError::Config(format!("initial state: {e}")))?;
    let state0 = BranchState::Pure(psi);
    let mut sampler = sampler_config(cfg, workers);
    sampler.validate().map_err(|e| CliError::Config(format!("sampler: {e}")))?;

    let oracle_dt = cfg.report.oracle_dt.unwrap_or(cfg.sampler.dt);
    if !(oracle_dt > 0.0) {
        return Err(CliError::Config(format!("oracle_dt must be positive, got {oracle_dt}")));
    }
    let steps = (cfg.tau / oracle_dt).ceil() as usize;
    let store_every = (steps / 256).max(1);
    let oracle = propagate(&sys, &state0.density(), cfg.tau, oracle_dt, store_every)
        .map_err(run_err)?;

    if cfg.sampler.time_distribution.as_deref() == Some("rate_weighted") {
        sampler.time_distribution = TimeDistribution::RateWeighted(rate_density(&oracle));
    }

    let outdir = resolve_output_dir(cfg, output_dir);
    std::fs::create_dir_all(&outdir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", outdir.display())))?;
    Ok(Prepared { sys, state0, oracle, sampler, outdir })
}

fn build_strategy(
    cfg: &RunConfig,
    name: &str,
    prep: &Prepared,
) -> Result<ResummationStrategy, CliError> {
    match name {
        "no_shift" => Ok(ResummationStrategy::NoShift),
        "optimal" => Ok(ResummationStrategy::Optimal),
        "piecewise_constant" => Ok(ResummationStrategy::PiecewiseConstant),
        "index_conditioned" => Ok(ResummationStrategy::index_conditioned(&prep.sys)),
        "fixed" => {
            let pairs = cfg
                .strategy
                .shift
                .as_ref()
                .ok_or_else(|| CliError::Config("fixed strategy needs a shift array".into()))?;
            if pairs.len() != prep.sys.num_jumps() {
                return Err(CliError::Config(format!(
                    "shift length {} does not match the {} jump operators",
                    pairs.len(),
                    prep.sys.num_jumps()
                )));
            }
            let values = pairs.iter().map(|p| C64::new(p[0], p[1])).collect();
            Ok(ResummationStrategy::Fixed(ShiftVector::new(values)))
        }
        "per_order" => {
            let n_times = cfg.strategy.grid_times.unwrap_or(33);
            let n_samples = cfg.strategy.grid_samples.unwrap_or(1000);
            let grid = PerOrderGrid::build(
                &prep.sys,
                &prep.state0,
                cfg.tau,
                cfg.sampler.dt,
                cfg.sampler.max_order,
                n_times,
                n_samples,
                cfg.sampler.seed,
            )
            .map_err(run_err)?;
            Ok(ResummationStrategy::per_order(grid))
        }
        other => Err(CliError::Config(format!("unknown strategy {other:?}"))),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// The final oracle density matrix as JSON: dim plus row-major
/// [re, im] entries.
fn oracle_state_json(rho: &CMat) -> String {
    let data: Vec<[f64; 2]> = rho.iter().map(|z| [z.re, z.im]).collect();
    serde_json::json!({ "dim": rho.nrows(), "data": data }).to_string()
}

fn versions() -> serde_json::Value {
    serde_json::json!({
        "jumpexp-cli": env!("CARGO_PKG_VERSION"),
        "format": "JXD1",
    })
}

fn write_manifest(
    outdir: &Path,
    command: &str,
    cfg: &RunConfig,
    strategies: &[String],
    wall_clock: f64,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command: command.to_string(),
        config: cfg.clone(),
        strategies: strategies.to_vec(),
        versions: versions(),
        wall_clock_seconds: wall_clock,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("manifest: {e}")))?;
    write_file(&outdir.join("manifest.json"), text.as_bytes())
}

fn execute_run(
    cfg: RunConfig,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let prep = prepare(&cfg, output_dir, workers)?;
    let strategy = build_strategy(&cfg, &cfg.strategy.name, &prep)?;

    let estimate =
        estimate_expansion(&prep.sys, &strategy, &prep.state0, cfg.tau, &prep.sampler)
            .map_err(run_err)?;
    let report = ConvergenceReport::build(
        prep.oracle.final_state(),
        &estimate,
        cfg.model.name(),
        strategy.name(),
        &prep.sampler,
        cfg.tau,
    )
    .map_err(run_err)?;

    let out = &prep.outdir;
    write_file(&out.join("oracle.csv"), prep.oracle.to_csv().as_bytes())?;
    write_file(
        &out.join("oracle_state.json"),
        oracle_state_json(prep.oracle.final_state()).as_bytes(),
    )?;
    write_file(&out.join("estimate.csv"), estimate.to_csv().as_bytes())?;
    write_file(&out.join("estimate.bin"), &estimate.to_bytes())?;
    write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_manifest(out, "run", &cfg, &[], start.elapsed().as_secs_f64())?;

    let last = report.fidelity.last().copied().unwrap_or(f64::NAN);
    let cum = report.cum_weight.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} / {}: F_{} = {:.4}, captured weight {:.4} -> {}",
        cfg.model.name(),
        strategy.name(),
        report.k_values.last().unwrap(),
        last,
        cum,
        out.display()
    );
    Ok(())
}

fn execute_compare(
    cfg: RunConfig,
    strategies: &[String],
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    if strategies.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least two strategies, got {}",
            strategies.len()
        )));
    }
    let start = std::time::Instant::now();
    // one shared oracle propagation for every strategy
    let prep = prepare(&cfg, output_dir, workers)?;
    let mut reports = Vec::with_capacity(strategies.len());
    for name in strategies {
        let strategy = build_strategy(&cfg, name, &prep)?;
        let estimate =
            estimate_expansion(&prep.sys, &strategy, &prep.state0, cfg.tau, &prep.sampler)
                .map_err(run_err)?;
        let report = ConvergenceReport::build(
            prep.oracle.final_state(),
            &estimate,
            cfg.model.name(),
            strategy.name(),
            &prep.sampler,
            cfg.tau,
        )
        .map_err(run_err)?;
        let out = prep.outdir.join(format!("report_{}.csv", strategy.name()));
        write_file(&out, report.to_csv().as_bytes())?;
        println!(
            "{} / {}: F_{} = {:.4}",
            cfg.model.name(),
            strategy.name(),
            report.k_values.last().unwrap(),
            report.fidelity.last().copied().unwrap_or(f64::NAN)
        );
        reports.push(report);
    }
    let out = &prep.outdir;
    write_file(&out.join("oracle.csv"), prep.oracle.to_csv().as_bytes())?;
    write_file(
        &out.join("oracle_state.json"),
        oracle_state_json(prep.oracle.final_state()).as_bytes(),
    )?;
    write_file(&out.join("combined.csv"), ConvergenceReport::combined_csv(&reports).as_bytes())?;
    write_manifest(out, "compare", &cfg, strategies, start.elapsed().as_secs_f64())?;
    println!("combined report -> {}", out.join("combined.csv").display());
    Ok(())
}

fn execute_replay(manifest_path: &Path, output_dir: Option<PathBuf>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    validate_config(&manifest.config)?;
    match manifest.command.as_str() {
        "run" => execute_run(manifest.config, output_dir, None),
        "compare" => {
            let strategies = manifest.strategies.clone();
            execute_compare(manifest.config, &strategies, output_dir, None)
        }
        other => Err(CliError::Config(format!("manifest has unknown command {other:?}"))),
    }
}
