//! Stochastic gradient Langevin dynamics over composable stochastic targets,
//! plus Adam-based MAP optimisation.
//!
//! Randomness is counter based: step `t` of a chain with stream `s` evaluates
//! its target under `s.child(t).child(0)` and draws its noise from
//! `s.child(t).child(1)`. A chain is therefore a pure function of
//! `(target, config, initial state)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field_net::ParamField;
use crate::mercer::MercerPrior;
use crate::rng::Stream;

/// One additive term of a log-density with an unbiased gradient estimate.
pub trait LogDensityTerm: Send + Sync {
    /// Stochastic `(value, gradient)` at `theta`.
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)>;
}

impl<F> LogDensityTerm for F
where
    F: Fn(&[f64], Stream) -> Result<(f64, Vec<f64>)> + Send + Sync,
{
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        self(theta, stream)
    }
}

/// Sum of independent terms; term `k` draws from `stream.child(k)`.
#[derive(Default)]
pub struct LogDensity {
    terms: Vec<Box<dyn LogDensityTerm>>,
}

impl LogDensity {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, term: impl LogDensityTerm + 'static) -> Self {
        self.terms.push(Box::new(term));
        self
    }

    pub fn push(&mut self, term: impl LogDensityTerm + 'static) {
        self.terms.push(Box::new(term));
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl LogDensityTerm for LogDensity {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; theta.len()];
        for (k, term) in self.terms.iter().enumerate() {
            let (v, g) = term.estimate(theta, stream.child(k as u64))?;
            if g.len() != theta.len() {
                return Err(Error::Config(format!(
                    "term {k} returned a gradient of length {}, expected {}",
                    g.len(),
                    theta.len()
                )));
            }
            value += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((value, grad))
    }
}

/// Mercer prior over a parameterised field, as a log-density term.
pub struct PriorTerm<P> {
    pub prior: MercerPrior,
    pub field: P,
}

impl<P: ParamField + Send> PriorTerm<P> {
    pub fn new(prior: MercerPrior, field: P) -> Self {
        PriorTerm { prior, field }
    }
}

impl<P: ParamField + Send> LogDensityTerm for PriorTerm<P> {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        let (draw, grad) = self.prior.estimate_with_grad(&self.field, theta, stream)?;
        Ok((draw.value, grad))
    }
}

/// Independent zero-mean Gaussian on selected coordinates.
pub struct GaussianTerm {
    pub indices: Vec<usize>,
    pub sd: f64,
}

impl LogDensityTerm for GaussianTerm {
    fn estimate(&self, theta: &[f64], _stream: Stream) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; theta.len()];
        let mut value = 0.0;
        let prec = 1.0 / (self.sd * self.sd);
        for &k in &self.indices {
            value -= 0.5 * prec * theta[k] * theta[k];
            grad[k] = -prec * theta[k];
        }
        Ok((value, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { epsilon: f64 },
    /// `epsilon_t = a (b + t)^(-gamma)`.
    PolyDecay { a: f64, b: f64, gamma: f64 },
}

impl StepSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { epsilon } => epsilon,
            StepSchedule::PolyDecay { a, b, gamma } => a * (b + t as f64).powf(-gamma),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { epsilon } => epsilon > 0.0 && epsilon.is_finite(),
            StepSchedule::PolyDecay { a, b, gamma } => a > 0.0 && b > 0.0 && gamma >= 0.0 && a.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("step size schedule must stay positive: {self:?}")))
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Constant { epsilon: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub steps: u64,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_thinning")]
    pub thinning: u64,
    #[serde(default)]
    pub seed: u64,
    /// Likelihood minibatch size `B`; `None` uses the full data set.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Diagonal preconditioner `G`: drift `(epsilon/2) G g`, noise `N(0, epsilon G)`.
    #[serde(default)]
    pub preconditioner: Option<Vec<f64>>,
}

fn default_thinning() -> u64 {
    100
}

impl ChainConfig {
    pub fn new(steps: u64, schedule: StepSchedule) -> Self {
        ChainConfig {
            steps,
            schedule,
            burn_in: 0,
            thinning: 1,
            seed: 0,
            batch_size: None,
            preconditioner: None,
        }
    }

    pub fn burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn thinning(mut self, thinning: u64) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps == 0 || self.burn_in >= self.steps {
            return Err(Error::Config(format!(
                "need burn_in < steps, got burn_in {} and steps {}",
                self.burn_in, self.steps
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if let Some(g) = &self.preconditioner {
            if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("preconditioner entries must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of samples a chain keeps.
    pub fn kept(&self) -> u64 {
        (self.steps - self.burn_in) / self.thinning
    }

    /// Whether the state after step `t` (0-based) is kept.
    pub fn keeps(&self, t: u64) -> bool {
        t >= self.burn_in && (t + 1 - self.burn_in) % self.thinning == 0
    }
}

/// Evolving chain state; the random state is the `(stream, t)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub t: u64,
    pub stream: Stream,
}

impl ChainState {
    pub fn new(theta: Vec<f64>, stream: Stream) -> Self {
        ChainState { theta, t: 0, stream }
    }
}

/// Per-step options. Outside tests the defaults apply.
#[derive(Clone, Debug, Default)]
pub struct StepControl<'a> {
    /// Testing hook: skip the Langevin noise so the step is a pure drift.
    pub suppress_noise: bool,
    pub preconditioner: Option<&'a [f64]>,
}

/// Langevin noise `N(0, epsilon I)` for one step.
pub fn langevin_noise(stream: Stream, dim: usize, epsilon: f64) -> Vec<f64> {
    let mut rng = stream.rng();
    let sd = epsilon.sqrt();
    (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn sgld_step<T: LogDensityTerm + ?Sized>(state: &ChainState, target: &T, epsilon: f64) -> Result<ChainState> {
    sgld_step_with(state, target, epsilon, &StepControl::default())
}

pub fn sgld_step_with<T: LogDensityTerm + ?Sized>(
    state: &ChainState,
    target: &T,
    epsilon: f64,
    control: &StepControl<'_>,
) -> Result<ChainState> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Input(format!("step size must be positive, got {epsilon}")));
    }
    let step = state.stream.child(state.t);
    let (_, grad) = target.estimate(&state.theta, step.child(0))?;
    if grad.len() != state.theta.len() {
        return Err(Error::Config("gradient length does not match parameters".into()));
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient component {k} at step {}",
            state.t
        )));
    }
    let mut theta = state.theta.clone();
    let noise = if control.suppress_noise {
        None
    } else {
        Some(langevin_noise(step.child(1), theta.len(), 1.0))
    };
    for k in 0..theta.len() {
        let g = control.preconditioner.map_or(1.0, |p| p[k]);
        theta[k] += 0.5 * epsilon * g * grad[k];
        if let Some(z) = &noise {
            theta[k] += (epsilon * g).sqrt() * z[k];
        }
    }
    Ok(ChainState {
        theta,
        t: state.t + 1,
        stream: state.stream,
    })
}

/// Kept samples and the final state of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<Vec<f64>>,
    pub final_state: ChainState,
}

/// Stream of chain `index` under `seed`.
pub fn chain_stream(seed: u64, index: u64) -> Stream {
    Stream::new(seed).child(index)
}

/// Runs chain 0 of `config` from `init`.
pub fn run_chain<T: LogDensityTerm + ?Sized>(target: &T, config: &ChainConfig, init: &[f64]) -> Result<ChainOutput> {
    run_chain_indexed(target, config, init, 0)
}

/// [`run_chain`] for chain `index` of an ensemble, with noise from [`chain_stream`].
pub fn run_chain_indexed<T: LogDensityTerm + ?Sized>(
    target: &T,
    config: &ChainConfig,
    init: &[f64],
    index: u64,
) -> Result<ChainOutput> {
    config.validate()?;
    if let Some(g) = &config.preconditioner {
        if g.len() != init.len() {
            return Err(Error::Config("preconditioner length does not match parameters".into()));
        }
    }
    let control = StepControl {
        suppress_noise: false,
        preconditioner: config.preconditioner.as_deref(),
    };
    let mut state = ChainState::new(init.to_vec(), chain_stream(config.seed, index));
    let mut samples = Vec::with_capacity(config.kept() as usize);
    for t in 0..config.steps {
        state = sgld_step_with(&state, target, config.schedule.at(t), &control)?;
        if config.keeps(t) {
            samples.push(state.theta.clone());
        }
    }
    Ok(ChainOutput {
        samples,
        final_state: state,
    })
}

/// Runs one chain per initial point; chain `i` uses `chain_stream(seed, i)`.
pub fn run_chains<T: LogDensityTerm + ?Sized>(
    target: &T,
    config: &ChainConfig,
    inits: &[Vec<f64>],
    exec: Execution,
) -> Result<Vec<ChainOutput>> {
    exec.map_range(inits.len(), |i| run_chain_indexed(target, config, &inits[i], i as u64))
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub steps: u64,
    pub learning_rate: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(steps: u64, learning_rate: f64) -> Self {
        AdamConfig {
            steps,
            learning_rate,
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
            seed: 0,
        }
    }
}

/// Adam ascent on the stochastic log-density for a fixed number of steps.
pub fn map_optimize<T: LogDensityTerm + ?Sized>(target: &T, config: &AdamConfig, init: &[f64]) -> Result<Vec<f64>> {
    if !(config.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let root = Stream::new(config.seed).child(u64::MAX);
    let mut theta = init.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for t in 0..config.steps {
        let (value, grad) = target.estimate(&theta, root.child(t))?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite objective at optimisation step {t}")));
        }
        let b1t = 1.0 - config.beta1.powi(t as i32 + 1);
        let b2t = 1.0 - config.beta2.powi(t as i32 + 1);
        for k in 0..theta.len() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
            let mh = m[k] / b1t;
            let vh = v[k] / b2t;
            theta[k] += config.learning_rate * mh / (vh.sqrt() + config.eps);
        }
    }
    Ok(theta)
}

/// Diagonal preconditioner `G_k = 1 / max(H_kk, floor)`, where `H_kk` is the
/// negative second derivative of the target along coordinate `k` at `theta`,
/// taken by central differences of the gradient and averaged over `draws`
/// streams (a single draw of a stochastic target can be indefinite).
pub fn curvature_preconditioner<T: LogDensityTerm + ?Sized>(
    target: &T,
    theta: &[f64],
    stream: Stream,
    h: f64,
    draws: u64,
    floor: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && floor > 0.0) || draws == 0 {
        return Err(Error::Config("curvature estimate needs h > 0, floor > 0 and draws >= 1".into()));
    }
    exec.map_range(theta.len(), |k| {
        let (mut a, mut b) = (theta.to_vec(), theta.to_vec());
        a[k] += h;
        b[k] -= h;
        let mut curv = 0.0;
        for q in 0..draws {
            let s = stream.child(q);
            let (ga, gb) = (target.estimate(&a, s)?.1, target.estimate(&b, s)?.1);
            curv -= (ga[k] - gb[k]) / (2.0 * h);
        }
        curv /= draws as f64;
        if !curv.is_finite() {
            return Err(Error::Numerical(format!("non-finite curvature along coordinate {k}")));
        }
        Ok(1.0 / curv.max(floor))
    })
    .into_iter()
    .collect()
}
