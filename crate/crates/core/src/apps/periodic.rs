//! Extrapolation with a periodic Mercer prior around a linear trend.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::regression::{gaussian_loglik, minibatch};
use super::summary::{predictive_summary, PredictiveSummary};
use crate::error::{Error, Result};
use crate::field_net::{Activation, Architecture, FieldNet, FourierFeatures, Fluctuation, MeanFunction, ParamField, Wrapper};
use crate::mercer::MercerPrior;
use crate::rng::Stream;
use crate::sgld::LogDensityTerm;
use crate::stats::SampleEnsemble;

/// Network on harmonic features `cos/sin(2 pi k t / period)`, `k <= n_harmonics`,
/// plus the raw input, shifted by the mean `slope * t`.
pub fn periodic_architecture(width: usize, period: f64, n_harmonics: usize, slope: f64) -> Architecture {
    Architecture {
        input_dim: 1,
        hidden_widths: vec![width],
        activation: Activation::Tanh,
        fourier: Some(FourierFeatures::harmonics(period, n_harmonics).with_input()),
        wrappers: vec![Wrapper::MeanShift { mean: MeanFunction::Linear { slope, intercept: 0.0 } }],
    }
}

/// Mercer prior on the fluctuation around the mean plus a Gaussian likelihood.
pub struct PeriodicModel {
    net: FieldNet,
    fluct: Fluctuation,
    prior: MercerPrior,
    train: Dataset,
    sigma: f64,
    batch: Option<usize>,
}

impl PeriodicModel {
    pub fn new(net: FieldNet, prior: MercerPrior, train: Dataset, sigma: f64, batch: Option<usize>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Input("periodic model needs training data".into()));
        }
        if train.sigma.is_none() && !(sigma > 0.0) {
            return Err(Error::Config(format!("noise sd must be positive, got {sigma}")));
        }
        Ok(PeriodicModel { fluct: net.fluctuation(), net, prior, train, sigma, batch })
    }

    pub fn net(&self) -> &FieldNet {
        &self.net
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    /// Streams: `child(0)` prior, `child(1)` minibatch.
    pub fn log_posterior(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        let (draw, mut grad) = self.prior.estimate_with_grad(&self.fluct, theta, stream.child(0))?;
        let batch = minibatch(self.train.len(), self.batch, stream.child(1));
        let (ll, gl) = gaussian_loglik(&self.net, theta, &self.train, self.sigma, &batch)?;
        for (a, b) in grad.iter_mut().zip(gl) {
            *a += b;
        }
        Ok((draw.value + ll, grad))
    }
}

impl LogDensityTerm for PeriodicModel {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        self.log_posterior(theta, stream)
    }
}

/// Predictive band with fit quality inside and beyond the training window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicPrediction {
    pub summary: PredictiveSummary,
    /// Root-mean-square error of the posterior mean on the training data.
    pub train_error: f64,
    /// The same on the held-out data.
    pub test_error: f64,
    /// Median band width inside the training window.
    pub train_width: f64,
    /// Median band width beyond it.
    pub test_width: f64,
}

fn rmse(net: &FieldNet, samples: &[Vec<f64>], data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; data.len()];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(net.values(s, &data.t)) {
            *m += v / n;
        }
    }
    let sse: f64 = mean.iter().zip(&data.y).map(|(m, y)| (m - y).powi(2)).sum();
    (sse / data.len() as f64).sqrt()
}

/// Evaluates posterior samples on `grid` and summarizes them against the
/// training data (`t <= split`) and held-out data (`t > split`).
pub fn periodic_predict(
    net: &FieldNet,
    samples: &[Vec<f64>],
    grid: &[f64],
    train: &Dataset,
    test: &Dataset,
    split: f64,
    levels: (f64, f64),
) -> Result<PeriodicPrediction> {
    if samples.is_empty() {
        return Err(Error::Input("no posterior samples".into()));
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| net.values(s, grid)).collect();
    let ensemble = SampleEnsemble::from_rows(&rows, grid.to_vec())?;
    let summary = predictive_summary(&ensemble, levels)?;
    let train_width = summary.median_width(f64::NEG_INFINITY, split);
    let test_width = summary.median_width(split + f64::EPSILON, f64::INFINITY);
    Ok(PeriodicPrediction {
        train_error: rmse(net, samples, train),
        test_error: rmse(net, samples, test),
        summary,
        train_width,
        test_width,
    })
}
