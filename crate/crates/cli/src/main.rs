//! `mercer`: config-driven prior sampling, ensemble statistics, posterior
//! fitting and the analytic cost model.
//!
//! Exit codes: 0 on success, 2 for configuration or input errors, 3 for
//! numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mercer_prior::config::{parse_document, sha256_hex, ExperimentConfig};
use mercer_prior::cost::{self, Scenario, DEFAULT_BUDGET};
use mercer_prior::gp_oracle::{Kernel, KernelSpec};
use mercer_prior::io::{self, Provenance};
use mercer_prior::pipeline;
use mercer_prior::stats::{covariance_error_map, empirical_covariance, ks_kernel_profile};
use mercer_prior::{Error, Execution, Result, Stream};

#[derive(Parser)]
#[command(name = "mercer", version, about = "Mercer-prior Bayesian neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run prior-only chains and write the evaluated ensemble.
    SamplePrior(RunArgs),
    /// Covariance error map and KS slice profile of an ensemble file.
    Stats(StatsArgs),
    /// Posterior sampling for a regress, hetero, periodic or invert task.
    Fit(RunArgs),
    /// FLOP counts of the Mercer, naive GP and KISS-GP samplers.
    Cost(CostArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `chain.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Stats document; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ensemble: Option<PathBuf>,
    /// Closed-form reference kernel (a truncated kernel needs --config).
    #[arg(long, value_enum)]
    kernel: Option<KernelName>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelName {
    BrownianMotion,
    BrownianBridge,
    Zero,
}

#[derive(Args)]
struct CostArgs {
    /// Cost document with `scenario` and optional `budget`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario used when no config is given.
    #[arg(long, value_enum, default_value = "high")]
    scenario: Preset,
    /// Number of test points `P`.
    #[arg(long)]
    p: Option<u64>,
    /// FLOP budget for the crossover search.
    #[arg(long)]
    budget: Option<f64>,
    /// Recorded in the output only; the cost model is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    High,
    Low,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}
fn default_reference_size() -> usize {
    10_000
}
fn default_min_gap() -> f64 {
    0.3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsConfig {
    #[serde(default)]
    ensemble: Option<PathBuf>,
    #[serde(default)]
    kernel: Option<KernelSpec>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_times")]
    times: Vec<f64>,
    /// Draws from the reference Gaussian per slice.
    #[serde(default = "default_reference_size")]
    reference_size: usize,
    /// Off-diagonal band `|s - t| > min_gap` reported separately.
    #[serde(default = "default_min_gap")]
    min_gap: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostConfig {
    scenario: Scenario,
    #[serde(default)]
    budget: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn prepare_out(out: Option<&Path>, fallback: Option<&Path>) -> Result<PathBuf> {
    let dir = out.or(fallback).map_or_else(|| PathBuf::from("out"), Path::to_path_buf);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn load_experiment(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg.chain.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct PriorReport<'a> {
    task: &'a str,
    n_samples: usize,
    grid_points: usize,
    chains: usize,
    config: &'a ExperimentConfig,
}

fn sample_prior(args: RunArgs) -> Result<()> {
    let cfg = load_experiment(&args)?;
    let run = pipeline::sample_prior(&cfg, exec(args.sequential))?;
    let out = prepare_out(args.out.as_deref(), cfg.output.as_deref())?;
    let prov = Provenance::new(cfg.hash(), cfg.chain.seed);
    io::write_file(&out.join("ensemble.csv"), |w| io::write_ensemble(w, &run.ensemble, &prov))?;
    io::write_file(&out.join("samples.csv"), |w| io::write_rows(w, &run.posterior.samples, &prov))?;
    let report = PriorReport {
        task: cfg.task.name(),
        n_samples: run.ensemble.n_samples(),
        grid_points: run.ensemble.grid().len(),
        chains: cfg.chain.chains,
        config: &cfg,
    };
    io::write_file(&out.join("run.json"), |w| io::write_json(w, &report, &prov))?;
    eprintln!("wrote {} samples on {} grid points to {}", report.n_samples, report.grid_points, out.display());
    Ok(())
}

#[derive(Serialize)]
struct StatsReport<'a> {
    n_samples: usize,
    grid_points: usize,
    max_error: f64,
    max_location: (f64, f64),
    min_gap: f64,
    max_off_diagonal: f64,
    alpha: f64,
    slices: &'a [mercer_prior::stats::SliceResult],
    slices_passed: usize,
}

fn stats(args: StatsArgs) -> Result<()> {
    let mut cfg: StatsConfig = match &args.config {
        Some(p) => parse_document(&read_text(p)?)?,
        None => parse_document("{}")?,
    };
    if let Some(e) = args.ensemble {
        cfg.ensemble = Some(e);
    }
    if let Some(k) = args.kernel {
        cfg.kernel = Some(match k {
            KernelName::BrownianMotion => KernelSpec::BrownianMotion,
            KernelName::BrownianBridge => KernelSpec::BrownianBridge,
            KernelName::Zero => KernelSpec::Zero,
        });
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha: must lie in (0, 1), got {}", cfg.alpha)));
    }
    if cfg.reference_size == 0 {
        return Err(Error::Config("reference_size: must be positive".into()));
    }
    let path = cfg.ensemble.clone().ok_or_else(|| Error::Config("ensemble: no ensemble file given".into()))?;
    let spec = cfg.kernel.clone().ok_or_else(|| Error::Config("kernel: no reference kernel given".into()))?;
    let kernel = Kernel::from_spec(&spec)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let (ens, _) = io::read_ensemble(bytes.as_slice())?;
    if ens.n_samples() < 2 {
        return Err(Error::Input("statistics need at least two samples".into()));
    }

    let mut seeded = cfg.clone();
    seeded.seed = 0;
    seeded.output = None;
    seeded.ensemble = None;
    let doc = serde_json::to_string(&seeded)?;
    let hash = sha256_hex(format!("{doc}\n{}", sha256_hex(&bytes)).as_bytes());
    let prov = Provenance::new(hash, cfg.seed);

    let q = empirical_covariance(&ens)?;
    let map = covariance_error_map(&q, &kernel, ens.grid())?;
    let run_exec = Execution::default();
    let slices = ks_kernel_profile(&ens, &kernel, &cfg.times, cfg.reference_size, Stream::new(cfg.seed), cfg.alpha, run_exec)?;

    let out = prepare_out(args.out.as_deref(), cfg.output.as_deref())?;
    let grid = ens.grid().to_vec();
    let with_grid = |m: &mercer_prior::nalgebra::DMatrix<f64>| {
        let mut rows = vec![grid.clone()];
        rows.extend((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()));
        rows
    };
    io::write_file(&out.join("covariance.csv"), |w| io::write_rows(w, &with_grid(&q), &prov))?;
    io::write_file(&out.join("error_map.csv"), |w| io::write_rows(w, &with_grid(&map.errors), &prov))?;
    let col = |f: &dyn Fn(&mercer_prior::stats::SliceResult) -> f64| slices.iter().map(f).collect::<Vec<f64>>();
    let (time, grid_time) = (col(&|s| s.time), col(&|s| s.grid_time));
    let (stat, crit, p, pass) = (
        col(&|s| s.ks.statistic),
        col(&|s| s.ks.critical),
        col(&|s| s.ks.p_value),
        col(&|s| if s.pass() { 1.0 } else { 0.0 }),
    );
    io::write_file(&out.join("ks_profile.csv"), |w| {
        io::write_table(
            w,
            &["time", "grid_time", "statistic", "critical", "p_value", "pass"],
            &[&time, &grid_time, &stat, &crit, &p, &pass],
            &prov,
        )
    })?;
    let report = StatsReport {
        n_samples: ens.n_samples(),
        grid_points: grid.len(),
        max_error: map.max,
        max_location: map.location,
        min_gap: cfg.min_gap,
        max_off_diagonal: map.max_off_diagonal(&grid, cfg.min_gap),
        alpha: cfg.alpha,
        slices: &slices,
        slices_passed: slices.iter().filter(|s| s.pass()).count(),
    };
    io::write_file(&out.join("stats.json"), |w| io::write_json(w, &report, &prov))?;
    eprintln!(
        "max covariance error {:.4} at ({:.3}, {:.3}); {}/{} KS slices pass",
        report.max_error,
        map.location.0,
        map.location.1,
        report.slices_passed,
        slices.len()
    );
    Ok(())
}

fn fit(args: RunArgs) -> Result<()> {
    let cfg = load_experiment(&args)?;
    let run = pipeline::fit(&cfg, exec(args.sequential))?;
    let out = prepare_out(args.out.as_deref(), cfg.output.as_deref())?;
    let prov = Provenance::new(cfg.hash(), cfg.chain.seed);
    io::write_file(&out.join("samples.csv"), |w| io::write_rows(w, &run.posterior.samples, &prov))?;
    io::write_file(&out.join("starts.csv"), |w| io::write_rows(w, &run.posterior.starts, &prov))?;
    for b in &run.bands {
        let s = &b.summary;
        io::write_file(&out.join(format!("band_{}.csv", b.name)), |w| {
            io::write_table(w, &["grid", "mean", "lower", "upper"], &[&s.grid, &s.mean, &s.lower, &s.upper], &prov)
        })?;
    }
    io::write_file(&out.join("report.json"), |w| io::write_json(w, &run.report, &prov))?;
    eprintln!("{}: {} posterior samples written to {}", run.report.task, run.report.n_samples, out.display());
    Ok(())
}

fn cost(args: CostArgs) -> Result<()> {
    let (doc, mut scenario, mut budget) = match &args.config {
        Some(p) => {
            let text = read_text(p)?;
            let c: CostConfig = parse_document(&text)?;
            (serde_json::to_string(&c)?, c.scenario, c.budget)
        }
        None => {
            let p = args.p.unwrap_or(1_000_000);
            let s = match args.scenario {
                Preset::High => Scenario::high_cost(p),
                Preset::Low => Scenario::low_cost(p),
            };
            (String::new(), s, None)
        }
    };
    if let Some(p) = args.p {
        scenario = scenario.with_p(p);
    }
    if args.budget.is_some() {
        budget = args.budget;
    }
    let budget = budget.unwrap_or(DEFAULT_BUDGET);
    let report = cost::report(&scenario, budget)?;
    let hash = sha256_hex(format!("{doc}\n{}", serde_json::to_string(&report)?).as_bytes());
    let prov = Provenance::new(hash, args.seed);
    let mut stdout = std::io::stdout().lock();
    io::write_json(&mut stdout, &report, &prov)?;
    if let Some(dir) = args.out.as_deref() {
        std::fs::create_dir_all(dir)?;
        io::write_file(&dir.join("cost.json"), |w| io::write_json(w, &report, &prov))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SamplePrior(a) => sample_prior(a),
        Command::Stats(a) => stats(a),
        Command::Fit(a) => fit(a),
        Command::Cost(a) => cost(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
