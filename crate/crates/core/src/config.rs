//! Experiment configuration documents.
//!
//! A config is a JSON object with the sections `task`, `network`, `basis`,
//! `prior`, `chain` and optionally `data`, `synthetic` and `output`. Unknown
//! keys are rejected everywhere, and [`ExperimentConfig::validate`] checks
//! the cross-section constraints before any computation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::apps::heat::FluxObservation;
use crate::error::{Error, Result};
use crate::field_net::{Activation, Architecture, FourierFeatures, Wrapper};
use crate::mercer::{DomainSampling, IndexDistribution, MercerPrior};
use crate::sgld::{AdamConfig, ChainConfig, StepSchedule};
use crate::spectrum::{uniform_grid, BasisSpec, Eigenbasis};

/// Input feature map of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// Random Fourier features with frequencies drawn from `N(0, scale^2)`.
    Random { n_frequencies: usize, scale: f64, seed: u64 },
    /// `cos/sin(2 pi k x / period)` for `k = 1..=n_max`.
    Harmonics {
        period: f64,
        n_max: usize,
        #[serde(default)]
        include_input: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub features: Option<FeatureSpec>,
    #[serde(default)]
    pub wrappers: Vec<Wrapper>,
}

impl NetworkSpec {
    pub fn architecture(&self) -> Architecture {
        let fourier = self.features.as_ref().map(|f| match *f {
            FeatureSpec::Random { n_frequencies, scale, seed } => FourierFeatures::sample(n_frequencies, 1, scale, seed),
            FeatureSpec::Harmonics { period, n_max, include_input } => {
                let h = FourierFeatures::harmonics(period, n_max);
                if include_input {
                    h.with_input()
                } else {
                    h
                }
            }
        });
        Architecture {
            input_dim: 1,
            hidden_widths: self.hidden_widths.clone(),
            activation: self.activation,
            fourier,
            wrappers: self.wrappers.clone(),
        }
    }
}

/// Estimator batch sizes and sampling; the basis lives in its own section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub n_indices: usize,
    pub m1: usize,
    pub m2: usize,
    #[serde(default)]
    pub index_dist: IndexDistribution,
    #[serde(default)]
    pub sampling: DomainSampling,
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
}

impl PriorSpec {
    pub fn build(&self, basis: &BasisSpec) -> Result<MercerPrior> {
        let prior = MercerPrior::new(
            Eigenbasis::from_spec(basis)?,
            self.n_indices,
            self.m1,
            self.m2,
            self.index_dist.clone(),
        )?
        .with_sampling(self.sampling.clone())?;
        match self.domain {
            Some([a, b]) => prior.with_domain(a, b),
            None => Ok(prior),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub steps: u64,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "one")]
    pub thinning: u64,
    #[serde(default)]
    pub seed: u64,
    /// Independent chains; chain `i` starts from network initialisation `seed + i`.
    #[serde(default = "one_usize")]
    pub chains: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Adam steps towards the MAP before sampling.
    #[serde(default)]
    pub map: Option<MapSpec>,
    /// Diagonal curvature preconditioning estimated at the chain start.
    #[serde(default)]
    pub precondition: Option<PreconditionSpec>,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub steps: u64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionSpec {
    #[serde(default = "default_fd_step")]
    pub h: f64,
    #[serde(default = "default_draws")]
    pub draws: u64,
    /// Curvatures below the floor are raised to it.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_fd_step() -> f64 {
    1e-4
}
fn default_draws() -> u64 {
    32
}
fn default_floor() -> f64 {
    1.0
}

impl ChainSpec {
    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            steps: self.steps,
            schedule: self.schedule.clone(),
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
            batch_size: self.batch_size,
            preconditioner: None,
        }
    }

    pub fn adam_config(&self) -> Option<AdamConfig> {
        self.map.as_ref().map(|m| AdamConfig { seed: self.seed, ..AdamConfig::new(m.steps, m.learning_rate) })
    }
}

/// Evaluation grid `points` equispaced values on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        uniform_grid(self.lo, self.hi, self.points)
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.points < 1 || !(self.hi >= self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("{path}: need points >= 1 and lo <= hi")));
        }
        if self.points == 1 && self.hi != self.lo {
            return Err(Error::Config(format!("{path}: a single point needs lo == hi")));
        }
        Ok(())
    }
}

fn unit_grid() -> GridSpec {
    GridSpec { lo: 0.0, hi: 1.0, points: 101 }
}

fn default_levels() -> (f64, f64) {
    (0.025, 0.975)
}

fn default_split() -> f64 {
    0.65
}

fn default_trend_sd() -> f64 {
    1.0
}

/// What the experiment does, with the settings only that task needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Prior-only chains; kept networks are evaluated on `grid`.
    PriorOnly {
        #[serde(default = "unit_grid")]
        grid: GridSpec,
    },
    /// Gaussian regression on standardized data.
    Regress {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default = "unit_grid")]
        grid: GridSpec,
        #[serde(default = "default_levels")]
        levels: (f64, f64),
    },
    /// Mean and variance networks with independent priors on standardized data.
    Hetero {
        variance_network: NetworkSpec,
        variance_basis: BasisSpec,
        #[serde(default)]
        variance_prior: Option<PriorSpec>,
        /// Initial value of the variance network's learned intercept.
        #[serde(default)]
        variance_offset: Option<f64>,
        #[serde(default = "unit_grid")]
        grid: GridSpec,
        #[serde(default = "default_levels")]
        levels: (f64, f64),
    },
    /// Extrapolation beyond `split` with a learned correction to the mean
    /// whose parameters get `N(0, trend_sd^2)` priors.
    Periodic {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default = "default_split")]
        split: f64,
        #[serde(default = "default_trend_sd")]
        trend_sd: f64,
        #[serde(default = "unit_grid")]
        grid: GridSpec,
        #[serde(default = "default_levels")]
        levels: (f64, f64),
    },
    /// Conductivity from temperatures at positions in `[0, 1]`.
    Invert {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default = "default_resolution")]
        resolution: usize,
        #[serde(default)]
        flux: Option<FluxObservation>,
        /// Initial learned mean `(intercept, slope)` of the conductivity network.
        #[serde(default)]
        init_mean: Option<[f64; 2]>,
        /// Temperatures (kelvin) where the conductivity band is reported.
        #[serde(default = "kappa_grid")]
        grid: GridSpec,
        #[serde(default = "default_levels")]
        levels: (f64, f64),
    },
}

fn default_resolution() -> usize {
    crate::apps::heat::RESOLUTION
}

fn kappa_grid() -> GridSpec {
    GridSpec { lo: crate::apps::heat::T_LO, hi: crate::apps::heat::T_HI, points: 101 }
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::PriorOnly { .. } => "prior_only",
            Task::Regress { .. } => "regress",
            Task::Hetero { .. } => "hetero",
            Task::Periodic { .. } => "periodic",
            Task::Invert { .. } => "invert",
        }
    }

    pub fn needs_data(&self) -> bool {
        !matches!(self, Task::PriorOnly { .. })
    }
}

/// Bundled generators standing in for user data files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticData {
    /// `sin(2 pi t)` with noise sd `0.1 + 0.2 t`.
    Hetero { n: usize, seed: u64 },
    /// Trend `0.95 t` plus a sinusoid.
    Periodic { n: usize, period: f64, amplitude: f64, noise: f64, seed: u64 },
    /// Affine conductivity `a + b T`, with a noisy flux measurement.
    Thermal { a: f64, b: f64, n: usize, sigma: f64, flux_rel_sd: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub network: NetworkSpec,
    pub basis: BasisSpec,
    pub prior: PriorSpec,
    pub chain: ChainSpec,
    /// CSV data file, relative paths resolved against the config file.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticData>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Parses to a `serde_json::Value` first so schema errors carry the key path.
fn parse_with_path<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    from_value_with_path(value)
}

fn from_value_with_path<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_json::from_value::<T>(value.clone()).map_err(|e| {
        let path = locate_error(&value, &e.to_string());
        Error::Config(match path {
            Some(p) => format!("{p}: {e}"),
            None => e.to_string(),
        })
    })
}

/// Best-effort key path for an "unknown field" or "missing field" message.
fn locate_error(value: &serde_json::Value, msg: &str) -> Option<String> {
    let key = msg.split('`').nth(1)?;
    fn walk(v: &serde_json::Value, key: &str, path: &mut Vec<String>, missing: bool) -> bool {
        if let serde_json::Value::Object(map) = v {
            if !missing && map.contains_key(key) {
                path.push(key.to_string());
                return true;
            }
            for (k, child) in map {
                path.push(k.clone());
                if walk(child, key, path, missing) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    let mut path = Vec::new();
    let missing = msg.starts_with("missing field");
    if walk(value, key, &mut path, missing) {
        Some(path.join("."))
    } else {
        None
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = parse_with_path(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves a relative `data` path against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(d) = &cfg.data {
            if d.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data = Some(dir.join(d));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON serialization, lowercase hex.
    ///
    /// The chain seed is excluded so that seed overrides keep the hash; it
    /// is recorded next to the hash instead.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.chain.seed = 0;
        canonical.output = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        sha256_hex(text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.network.architecture();
        arch.validate().map_err(|e| Error::Config(format!("network: {e}")))?;
        Eigenbasis::from_spec(&self.basis).map_err(|e| Error::Config(format!("basis: {e}")))?;
        self.prior.build(&self.basis).map_err(|e| Error::Config(format!("prior: {e}")))?;
        self.chain.chain_config().validate().map_err(|e| Error::Config(format!("chain: {e}")))?;
        if self.chain.chains == 0 {
            return Err(Error::Config("chain.chains: need at least one chain".into()));
        }
        if let Some(m) = &self.chain.map {
            if !(m.learning_rate > 0.0) {
                return Err(Error::Config("chain.map.learning_rate: must be positive".into()));
            }
        }
        if let Some(p) = &self.chain.precondition {
            if !(p.h > 0.0 && p.floor > 0.0) || p.draws == 0 {
                return Err(Error::Config("chain.precondition: need h > 0, floor > 0, draws >= 1".into()));
            }
        }
        if self.data.is_some() && self.synthetic.is_some() {
            return Err(Error::Config("give either data or synthetic, not both".into()));
        }
        if self.task.needs_data() && self.data.is_none() && self.synthetic.is_none() {
            return Err(Error::Config(format!("task {}: needs data or synthetic", self.task.name())));
        }
        let levels_ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        match &self.task {
            Task::PriorOnly { grid } => grid.validate("task.grid")?,
            Task::Regress { sigma, grid, levels } => {
                grid.validate("task.grid")?;
                if let Some(s) = sigma {
                    positive("task.sigma", *s)?;
                }
                if !levels_ok(*levels) {
                    return Err(Error::Config("task.levels: need 0 <= lo <= hi <= 1".into()));
                }
            }
            Task::Hetero { variance_network, variance_basis, variance_prior, grid, levels, .. } => {
                grid.validate("task.grid")?;
                let va = variance_network.architecture();
                va.validate().map_err(|e| Error::Config(format!("task.variance_network: {e}")))?;
                if !va.wrappers.iter().any(|w| matches!(w, Wrapper::Softplus)) {
                    return Err(Error::Config("task.variance_network: needs a softplus wrapper".into()));
                }
                variance_prior
                    .as_ref()
                    .unwrap_or(&self.prior)
                    .build(variance_basis)
                    .map_err(|e| Error::Config(format!("task.variance_basis: {e}")))?;
                if !levels_ok(*levels) {
                    return Err(Error::Config("task.levels: need 0 <= lo <= hi <= 1".into()));
                }
            }
            Task::Periodic { sigma, split, trend_sd, grid, levels } => {
                grid.validate("task.grid")?;
                if let Some(s) = sigma {
                    positive("task.sigma", *s)?;
                }
                positive("task.trend_sd", *trend_sd)?;
                if !(0.0..1.0).contains(split) {
                    return Err(Error::Config("task.split: must lie in [0, 1)".into()));
                }
                if !levels_ok(*levels) {
                    return Err(Error::Config("task.levels: need 0 <= lo <= hi <= 1".into()));
                }
            }
            Task::Invert { sigma, resolution, flux, grid, levels, .. } => {
                grid.validate("task.grid")?;
                if let Some(s) = sigma {
                    positive("task.sigma", *s)?;
                }
                if *resolution == 0 {
                    return Err(Error::Config("task.resolution: must be at least 1".into()));
                }
                if let Some(f) = flux {
                    positive("task.flux.sd", f.sd)?;
                }
                if !matches!(arch.wrappers.last(), Some(Wrapper::Softplus)) {
                    return Err(Error::Config("network.wrappers: conductivity must end in softplus".into()));
                }
                if !levels_ok(*levels) {
                    return Err(Error::Config("task.levels: need 0 <= lo <= hi <= 1".into()));
                }
            }
        }
        if let Some(s) = &self.synthetic {
            let ok = matches!(
                (&self.task, s),
                (Task::Regress { .. } | Task::Hetero { .. }, SyntheticData::Hetero { .. })
                    | (Task::Regress { .. } | Task::Periodic { .. }, SyntheticData::Periodic { .. })
                    | (Task::Invert { .. }, SyntheticData::Thermal { .. })
            );
            if !ok {
                return Err(Error::Config(format!("synthetic: generator does not fit task {}", self.task.name())));
            }
        }
        Ok(())
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{path}: must be positive, got {v}")))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of `bytes`, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Parses any config-like document with key paths in schema errors.
pub fn parse_document<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    parse_with_path(text)
}
