//! Gaussian and heteroscedastic regression targets with minibatched likelihoods.

use rand::seq::index;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::field_net::{FieldNet, Fluctuation, ParamField};
use crate::mercer::MercerPrior;
use crate::rng::Stream;
use crate::sgld::LogDensityTerm;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Indices of a minibatch drawn without replacement; all points when `size`
/// is `None` or at least `n`.
pub fn minibatch(n: usize, size: Option<usize>, stream: Stream) -> Vec<usize> {
    match size {
        Some(b) if b < n => {
            let mut idx = index::sample(&mut stream.rng(), n, b).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Gaussian log-likelihood `sum_i log N(y_i; u(t_i), s_i^2)` over a minibatch,
/// rescaled by `n / |batch|`, with its parameter gradient.
///
/// `s_i` is the dataset's per-point sd when present, otherwise `sigma`.
pub fn gaussian_loglik<P: ParamField + ?Sized>(
    field: &P,
    theta: &[f64],
    data: &Dataset,
    sigma: f64,
    batch: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if data.sigma.is_none() && !(sigma > 0.0) {
        return Err(Error::Config(format!("likelihood noise sd must be positive, got {sigma}")));
    }
    if batch.is_empty() {
        return Ok((0.0, vec![0.0; field.n_params()]));
    }
    let scale = data.len() as f64 / batch.len() as f64;
    let xs: Vec<f64> = batch.iter().map(|&i| data.t[i]).collect();
    let u = field.values(theta, &xs);
    let mut value = 0.0;
    let mut cot = Vec::with_capacity(batch.len());
    for (k, &i) in batch.iter().enumerate() {
        let s = data.sd(i, sigma);
        let r = data.y[i] - u[k];
        value -= 0.5 * r * r / (s * s) + s.ln() + HALF_LN_2PI;
        cot.push(scale * r / (s * s));
    }
    Ok((scale * value, field.grad(theta, &xs, &cot)))
}

/// Minibatched Gaussian likelihood as an SGLD term.
pub struct GaussianLikelihood<P> {
    pub field: P,
    pub data: Dataset,
    pub sigma: f64,
    pub batch: Option<usize>,
}

impl<P: ParamField + Send> LogDensityTerm for GaussianLikelihood<P> {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        let batch = minibatch(self.data.len(), self.batch, stream);
        gaussian_loglik(&self.field, theta, &self.data, self.sigma, &batch)
    }
}

/// Mean field `m_theta` and positive variance field `sigma^2_psi`, each under
/// its own Mercer prior. Parameters are stored as `[theta; psi]`.
pub struct HeteroModel {
    mean_net: FieldNet,
    var_net: FieldNet,
    mean_fluct: Fluctuation,
    var_fluct: Fluctuation,
    mean_prior: MercerPrior,
    var_prior: MercerPrior,
    data: Dataset,
    batch: Option<usize>,
}

impl HeteroModel {
    pub fn new(
        mean_net: FieldNet,
        var_net: FieldNet,
        mean_prior: MercerPrior,
        var_prior: MercerPrior,
        data: Dataset,
        batch: Option<usize>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("heteroscedastic model needs data".into()));
        }
        if !var_net.architecture().wrappers.iter().any(|w| matches!(w, crate::field_net::Wrapper::Softplus)) {
            return Err(Error::Config("variance network needs a softplus link".into()));
        }
        Ok(HeteroModel {
            mean_fluct: mean_net.fluctuation(),
            var_fluct: var_net.fluctuation(),
            mean_net,
            var_net,
            mean_prior,
            var_prior,
            data,
            batch,
        })
    }

    pub fn n_params(&self) -> usize {
        self.mean_net.n_params() + self.var_net.n_params()
    }

    pub fn mean_net(&self) -> &FieldNet {
        &self.mean_net
    }

    pub fn var_net(&self) -> &FieldNet {
        &self.var_net
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.mean_net.n_params())
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut p = self.mean_net.init_params(seed).0;
        p.extend(self.var_net.init_params(seed.wrapping_add(1)).0);
        p
    }

    /// Heteroscedastic log-likelihood on `batch`, rescaled by `n / |batch|`,
    /// with gradients in `theta` and `psi`.
    pub fn loglik(&self, theta: &[f64], psi: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if batch.is_empty() {
            return Ok((0.0, vec![0.0; theta.len()], vec![0.0; psi.len()]));
        }
        let scale = self.data.len() as f64 / batch.len() as f64;
        let xs: Vec<f64> = batch.iter().map(|&i| self.data.t[i]).collect();
        let m = self.mean_net.values(theta, &xs);
        let v = self.var_net.values(psi, &xs);
        let mut value = 0.0;
        let (mut cm, mut cv) = (Vec::with_capacity(xs.len()), Vec::with_capacity(xs.len()));
        for (k, &i) in batch.iter().enumerate() {
            if !(v[k] > 0.0 && v[k].is_finite()) {
                return Err(Error::Numerical(format!("variance {} at t = {}", v[k], xs[k])));
            }
            let r = self.data.y[i] - m[k];
            value -= 0.5 * r * r / v[k] + 0.5 * v[k].ln() + HALF_LN_2PI;
            cm.push(scale * r / v[k]);
            cv.push(scale * 0.5 * (r * r / (v[k] * v[k]) - 1.0 / v[k]));
        }
        Ok((scale * value, self.mean_net.grad(theta, &xs, &cm), self.var_net.grad(psi, &xs, &cv)))
    }

    /// Two independent prior estimates plus the minibatch likelihood.
    /// Streams: `child(0)` mean prior, `child(1)` variance prior, `child(2)` batch.
    pub fn log_posterior(&self, params: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        if params.len() != self.n_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.n_params(), params.len())));
        }
        let (theta, psi) = self.split(params);
        let (dm, gm) = self.mean_prior.estimate_with_grad(&self.mean_fluct, theta, stream.child(0))?;
        let (dv, gv) = self.var_prior.estimate_with_grad(&self.var_fluct, psi, stream.child(1))?;
        let batch = minibatch(self.data.len(), self.batch, stream.child(2));
        let (ll, lm, lv) = self.loglik(theta, psi, &batch)?;
        let mut grad = Vec::with_capacity(params.len());
        grad.extend(gm.iter().zip(&lm).map(|(a, b)| a + b));
        grad.extend(gv.iter().zip(&lv).map(|(a, b)| a + b));
        Ok((dm.value + dv.value + ll, grad))
    }
}

impl LogDensityTerm for HeteroModel {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        self.log_posterior(theta, stream)
    }
}
