//! End-to-end runs described by an [`ExperimentConfig`]: prior sampling and
//! the fitting tasks. File handling is left to the caller.
//!
//! Stream layout under the chain seed `s`: chain `i` uses
//! `Stream::new(s).child(i)`, MAP optimisation of chain `i` uses Adam seed
//! `s + i`, and the curvature estimate uses `Stream::new(s).child(u64::MAX - 1)`.

use serde::Serialize;

use crate::apps::data::{hetero_mean, hetero_sd, hetero_synthetic, periodic_synthetic, periodic_truth, Dataset, Scaling};
use crate::apps::heat::{thermal_synthetic, AffineConductivity, FluxObservation, InverseModel};
use crate::apps::periodic::{periodic_predict, PeriodicModel};
use crate::apps::regression::{GaussianLikelihood, HeteroModel};
use crate::apps::summary::{predictive_summary, PredictiveSummary};
use crate::config::{ChainSpec, ExperimentConfig, SyntheticData, Task};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field_net::{FieldNet, ParamField};
use crate::rng::Stream;
use crate::sgld::{
    curvature_preconditioner, map_optimize, run_chain_indexed, AdamConfig, GaussianTerm, LogDensity, LogDensityTerm, PriorTerm,
};
use crate::spectrum::uniform_grid;
use crate::stats::{spearman, SampleEnsemble};

/// Chain starting points and pooled kept samples, chain by chain.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub starts: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
    /// Per-chain diagonal preconditioners, when configured.
    pub preconditioners: Vec<Vec<f64>>,
}

/// Optional MAP optimisation, optional curvature preconditioning at the first
/// start, then one SGLD chain per initial point.
pub fn sample_target<T: LogDensityTerm + ?Sized>(
    target: &T,
    chain: &ChainSpec,
    inits: &[Vec<f64>],
    exec: Execution,
) -> Result<Posterior> {
    if inits.is_empty() {
        return Err(Error::Config("no chains to run".into()));
    }
    let starts = match chain.adam_config() {
        Some(adam) => exec
            .map_range(inits.len(), |i| {
                let cfg = AdamConfig { seed: adam.seed.wrapping_add(i as u64), ..adam.clone() };
                map_optimize(target, &cfg, &inits[i])
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        None => inits.to_vec(),
    };
    let base = chain.chain_config();
    let outs = exec
        .map_range(starts.len(), |i| {
            let mut cfg = base.clone();
            if let Some(p) = &chain.precondition {
                let stream = Stream::new(chain.seed).child(u64::MAX - 1).child(i as u64);
                cfg.preconditioner = Some(curvature_preconditioner(target, &starts[i], stream, p.h, p.draws, p.floor, exec)?);
            }
            let out = run_chain_indexed(target, &cfg, &starts[i], i as u64)?;
            Ok((out.samples, cfg.preconditioner))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::new();
    let mut preconditioners = Vec::new();
    for (s, g) in outs {
        samples.extend(s);
        preconditioners.extend(g);
    }
    Ok(Posterior { starts, samples, preconditioners })
}

fn inits(net_params: impl Fn(u64) -> Vec<f64>, chain: &ChainSpec) -> Vec<Vec<f64>> {
    (0..chain.chains as u64).map(|i| net_params(chain.seed.wrapping_add(i))).collect()
}

#[derive(Clone, Debug)]
pub struct PriorRun {
    pub posterior: Posterior,
    pub ensemble: SampleEnsemble,
}

/// Prior-only chains, with kept networks evaluated on the task grid.
pub fn sample_prior(cfg: &ExperimentConfig, exec: Execution) -> Result<PriorRun> {
    let Task::PriorOnly { grid } = &cfg.task else {
        return Err(Error::Config(format!("sample-prior needs task prior_only, got {}", cfg.task.name())));
    };
    let net = FieldNet::new(cfg.network.architecture())?;
    let prior = cfg.prior.build(&cfg.basis)?;
    let target = PriorTerm::new(prior, net.fluctuation());
    let posterior = sample_target(&target, &cfg.chain, &inits(|s| net.init_params(s).0, &cfg.chain), exec)?;
    let grid = grid.values();
    let rows: Vec<Vec<f64>> = posterior.samples.iter().map(|s| net.values(s, &grid)).collect();
    let ensemble = SampleEnsemble::from_rows(&rows, grid)?.with_config_hash(cfg.hash());
    Ok(PriorRun { posterior, ensemble })
}

/// Data set plus a flux measurement when the generator provides one.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<FluxObservation>)> {
    let (data, flux) = match (&cfg.data, &cfg.synthetic) {
        (Some(path), None) => (Dataset::from_csv(path)?, None),
        (None, Some(SyntheticData::Hetero { n, seed })) => (hetero_synthetic(*n, *seed), None),
        (None, Some(SyntheticData::Periodic { n, period, amplitude, noise, seed })) => {
            (periodic_synthetic(*n, *period, *amplitude, *noise, *seed), None)
        }
        (None, Some(SyntheticData::Thermal { a, b, n, sigma, flux_rel_sd, seed })) => {
            let (d, f) = thermal_synthetic(AffineConductivity { a: *a, b: *b }, *n, *sigma, *flux_rel_sd, *seed);
            (d, Some(f))
        }
        _ => return Err(Error::Config("give exactly one of data and synthetic".into())),
    };
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    Ok((data, flux))
}

/// Noise sd from the config unless the data carry their own, in which case
/// the returned value is a placeholder the per-point values override.
fn resolve_sigma(data: &Dataset, configured: Option<f64>, default: Option<f64>) -> Result<f64> {
    match (data.sigma.is_some(), configured) {
        (true, Some(_)) => Err(Error::Config("task.sigma: noise sd given both in the data file and in the config".into())),
        (true, None) => Ok(1.0),
        (false, Some(s)) => Ok(s),
        (false, None) => default.ok_or_else(|| Error::Config("task.sigma: no noise sd in the data or the config".into())),
    }
}

fn check_unit_inputs(data: &Dataset, what: &str) -> Result<()> {
    match data.t.iter().position(|t| !(0.0..=1.0).contains(t)) {
        Some(i) => Err(Error::Input(format!("{what} {i} lies outside [0, 1]"))),
        None => Ok(()),
    }
}

/// A named pointwise band.
#[derive(Clone, Debug, Serialize)]
pub struct Band {
    pub name: String,
    pub summary: PredictiveSummary,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FitReport {
    pub task: String,
    pub n_data: usize,
    pub n_params: usize,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    /// Largest absolute residual of the first chain start, in data units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_max_abs_residual: Option<f64>,
    /// Fraction of grid points where the first band covers the generator truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_coverage: Option<f64>,
    /// Spearman correlation of the posterior mean noise sd with the generator's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd_rank_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_width: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub posterior: Posterior,
    pub bands: Vec<Band>,
    pub report: FitReport,
}

fn band(name: &str, rows: &[Vec<f64>], grid: Vec<f64>, levels: (f64, f64)) -> Result<Band> {
    let ens = SampleEnsemble::from_rows(rows, grid)?;
    Ok(Band { name: name.into(), summary: predictive_summary(&ens, levels)? })
}

fn ensure_samples(p: &Posterior) -> Result<()> {
    if p.samples.is_empty() {
        return Err(Error::Config("chain keeps no samples; check steps, burn_in and thinning".into()));
    }
    Ok(())
}

/// Runs a fitting task on the configured data.
pub fn fit(cfg: &ExperimentConfig, exec: Execution) -> Result<FitOutput> {
    let (data, flux) = load_data(cfg)?;
    fit_with_data(cfg, data, flux, exec)
}

pub fn fit_with_data(
    cfg: &ExperimentConfig,
    data: Dataset,
    synthetic_flux: Option<FluxObservation>,
    exec: Execution,
) -> Result<FitOutput> {
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    let net = FieldNet::new(cfg.network.architecture())?;
    let prior = cfg.prior.build(&cfg.basis)?;
    let chain = &cfg.chain;
    let mut report = FitReport { task: cfg.task.name().into(), n_data: data.len(), ..FitReport::default() };
    let out = match &cfg.task {
        Task::PriorOnly { .. } => return Err(Error::Config("task prior_only has nothing to fit".into())),
        Task::Regress { sigma, grid, levels } => {
            let sigma_raw = resolve_sigma(&data, *sigma, None)?;
            let (scaled, sc) = data.standardized()?;
            let sigma = sigma_raw / sc.y_sd;
            let target = LogDensity::new()
                .with(PriorTerm::new(prior, net.fluctuation()))
                .with(GaussianLikelihood { field: net.clone(), data: scaled.clone(), sigma, batch: chain.batch_size });
            let posterior = sample_target(&target, chain, &inits(|s| net.init_params(s).0, chain), exec)?;
            ensure_samples(&posterior)?;
            let g = grid.values();
            let rows: Vec<Vec<f64>> = posterior
                .samples
                .iter()
                .map(|s| net.values(s, &g).into_iter().map(|z| sc.output_inverse(z)).collect())
                .collect();
            let start = net.values(&posterior.starts[0], &scaled.t);
            report.start_max_abs_residual =
                Some(start.iter().zip(&data.y).map(|(z, y)| (sc.output_inverse(*z) - y).abs()).fold(0.0, f64::max));
            let orig: Vec<f64> = g.iter().map(|&s| sc.t_min + s * (sc.t_max - sc.t_min)).collect();
            let mean = band("mean", &rows, orig, *levels)?;
            if matches!(cfg.synthetic, Some(SyntheticData::Hetero { .. })) {
                report.truth_coverage = Some(mean.summary.coverage(hetero_mean));
            }
            report.scaling = Some(sc);
            report.n_params = net.n_params();
            FitOutput { posterior, bands: vec![mean], report }
        }
        Task::Hetero { variance_network, variance_basis, variance_prior, variance_offset, grid, levels } => {
            if data.sigma.is_some() {
                return Err(Error::Config("hetero: the data carry a noise column, but the noise is modeled".into()));
            }
            let (scaled, sc) = data.standardized()?;
            let var_net = FieldNet::new(variance_network.architecture())?;
            let var_prior = variance_prior.as_ref().unwrap_or(&cfg.prior).build(variance_basis)?;
            let model = HeteroModel::new(net.clone(), var_net.clone(), prior, var_prior, scaled, chain.batch_size)?;
            let offset = var_net.mean_offset_index();
            let init = |s: u64| {
                let mut p = model.init_params(s);
                if let (Some(k), Some(v)) = (offset, variance_offset) {
                    p[net.n_params() + k] = *v;
                }
                p
            };
            let posterior = sample_target(&model, chain, &inits(init, chain), exec)?;
            ensure_samples(&posterior)?;
            let g = grid.values();
            let (mut mrows, mut srows) = (Vec::new(), Vec::new());
            for s in &posterior.samples {
                let (th, ps) = model.split(s);
                mrows.push(net.values(th, &g).into_iter().map(|z| sc.output_inverse(z)).collect::<Vec<_>>());
                srows.push(var_net.values(ps, &g).into_iter().map(|v| v.sqrt() * sc.y_sd).collect::<Vec<_>>());
            }
            let orig: Vec<f64> = g.iter().map(|&s| sc.t_min + s * (sc.t_max - sc.t_min)).collect();
            let mean = band("mean", &mrows, orig.clone(), *levels)?;
            let sd = band("sd", &srows, orig.clone(), *levels)?;
            if matches!(cfg.synthetic, Some(SyntheticData::Hetero { .. })) {
                report.truth_coverage = Some(mean.summary.coverage(hetero_mean));
                let truth: Vec<f64> = orig.iter().map(|&t| hetero_sd(t)).collect();
                report.sd_rank_correlation = Some(spearman(&sd.summary.mean, &truth)?);
            }
            report.scaling = Some(sc);
            report.n_params = model.n_params();
            FitOutput { posterior, bands: vec![mean, sd], report }
        }
        Task::Periodic { sigma, split, trend_sd, grid, levels } => {
            check_unit_inputs(&data, "input")?;
            let sigma = resolve_sigma(&data, *sigma, None)?;
            let train = data.window(0.0, *split);
            let test = data.window(split + f64::EPSILON * split.max(1.0), 1.0);
            let model = PeriodicModel::new(net.clone(), prior, train.clone(), sigma, chain.batch_size)?;
            let target = LogDensity::new().with(model).with(GaussianTerm { indices: net.mean_params().collect(), sd: *trend_sd });
            let posterior = sample_target(&target, chain, &inits(|s| net.init_params(s).0, chain), exec)?;
            ensure_samples(&posterior)?;
            let g = grid.values();
            let pred = periodic_predict(&net, &posterior.samples, &g, &train, &test, *split, *levels)?;
            if let Some(SyntheticData::Periodic { period, amplitude, .. }) = &cfg.synthetic {
                report.truth_coverage = Some(pred.summary.coverage(|t| periodic_truth(t, *period, *amplitude)));
            }
            let start = net.values(&posterior.starts[0], &train.t);
            report.start_max_abs_residual = Some(start.iter().zip(&train.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            report.train_error = Some(pred.train_error);
            report.test_error = Some(pred.test_error);
            report.train_width = Some(pred.train_width);
            report.test_width = Some(pred.test_width);
            report.n_params = net.n_params();
            FitOutput { posterior, bands: vec![Band { name: "mean".into(), summary: pred.summary }], report }
        }
        Task::Invert { sigma, resolution, flux, init_mean, grid, levels } => {
            check_unit_inputs(&data, "measurement position")?;
            let sigma = resolve_sigma(&data, *sigma, Some(2.5))?;
            let flux = match (flux, synthetic_flux) {
                (Some(_), Some(_)) => return Err(Error::Config("task.flux: the synthetic generator already measures the flux".into())),
                (f, g) => f.or(g),
            };
            let model = InverseModel::new(net.clone(), prior, data.clone(), sigma, flux)?
                .with_resolution(*resolution)?
                .with_batch(chain.batch_size);
            let means = net.mean_params();
            let init = |s: u64| {
                let mut p = net.init_params(s).0;
                if let Some(m) = init_mean {
                    for (k, v) in means.clone().zip(m) {
                        p[k] = *v;
                    }
                }
                p
            };
            let posterior = sample_target(&model, chain, &inits(init, chain), exec)?;
            ensure_samples(&posterior)?;
            let temps = grid.values();
            let krows: Vec<Vec<f64>> = posterior.samples.iter().map(|s| model.kappa(s, &temps)).collect();
            let kappa = band("kappa", &krows, temps.clone(), *levels)?;
            let ys = uniform_grid(0.0, 1.0, 101);
            let trows = posterior
                .samples
                .iter()
                .map(|s| {
                    let p = model.profile(s)?;
                    ys.iter().map(|&y| p.temperature(y)).collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let temperature = band("temperature", &trows, ys, *levels)?;
            let pred = model.predict(&posterior.starts[0])?;
            report.start_max_abs_residual = Some(pred.iter().zip(&data.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            if let Some(SyntheticData::Thermal { a, b, .. }) = &cfg.synthetic {
                let truth = AffineConductivity { a: *a, b: *b };
                report.truth_coverage = Some(kappa.summary.coverage(|t| truth.eval(t)));
            }
            report.n_params = net.n_params();
            FitOutput { posterior, bands: vec![kappa, temperature], report }
        }
    };
    let mut out = out;
    out.report.n_samples = out.posterior.samples.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_only() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
            "task": {"kind": "prior_only", "grid": {"lo": 0, "hi": 1, "points": 3}},
            "network": {"hidden_widths": [8], "wrappers": [{"kind": "times_t"}]},
            "basis": {"family": {"kind": "brownian_motion"}, "truncation": 10},
            "prior": {"n_indices": 4, "m1": 16, "m2": 16},
            "chain": {"steps": 20, "burn_in": 10, "thinning": 5, "seed": 3, "chains": 2,
                      "schedule": {"kind": "constant", "epsilon": 1e-4}}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn prior_run_shape_and_determinism() {
        let cfg = prior_only();
        let a = sample_prior(&cfg, Execution::Sequential).unwrap();
        assert_eq!(a.ensemble.values().shape(), (4, 3));
        assert_eq!(a.ensemble.values().column(0).iter().copied().fold(0.0, f64::max), 0.0);
        let b = sample_prior(&cfg, Execution::default()).unwrap();
        assert_eq!(a.ensemble.values(), b.ensemble.values());
    }

    #[test]
    fn sigma_conflict_and_empty_data() {
        let d = Dataset::new(vec![0.0, 1.0], vec![0.0, 1.0], Some(vec![0.1, 0.1])).unwrap();
        assert!(matches!(resolve_sigma(&d, Some(0.2), None), Err(Error::Config(_))));
        let d = Dataset::new(vec![0.0, 1.0], vec![0.0, 1.0], None).unwrap();
        assert!(matches!(resolve_sigma(&d, None, None), Err(Error::Config(_))));
        assert_eq!(resolve_sigma(&d, None, Some(2.5)).unwrap(), 2.5);
        let mut cfg = prior_only();
        cfg.task = Task::Regress { sigma: Some(0.1), grid: crate::config::GridSpec { lo: 0.0, hi: 1.0, points: 5 }, levels: (0.025, 0.975) };
        let empty = Dataset::new(vec![], vec![], None).unwrap();
        assert!(matches!(fit_with_data(&cfg, empty, None, Execution::Sequential), Err(Error::Input(_))));
    }
}
