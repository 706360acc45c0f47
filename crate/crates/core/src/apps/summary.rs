//! Pointwise predictive summaries of path ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, SampleEnsemble};

/// Pointwise mean and quantile band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub levels: (f64, f64),
}

impl PredictiveSummary {
    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Fraction of grid points where `lower <= truth(t) <= upper`.
    pub fn coverage(&self, truth: impl Fn(f64) -> f64) -> f64 {
        let hits = self
            .grid
            .iter()
            .enumerate()
            .filter(|&(i, &t)| {
                let v = truth(t);
                self.lower[i] <= v && v <= self.upper[i]
            })
            .count();
        hits as f64 / self.grid.len() as f64
    }

    /// Median band width over grid points with `lo <= t <= hi`.
    pub fn median_width(&self, lo: f64, hi: f64) -> f64 {
        let mut w: Vec<f64> = (0..self.grid.len())
            .filter(|&i| self.grid[i] >= lo && self.grid[i] <= hi)
            .map(|i| self.width(i))
            .collect();
        w.sort_by(f64::total_cmp);
        quantile_sorted(&w, 0.5)
    }
}

/// Mean and `(lo, hi)` quantiles of every grid column.
pub fn predictive_summary(ensemble: &SampleEnsemble, levels: (f64, f64)) -> Result<PredictiveSummary> {
    let (lo, hi) = levels;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Input(format!("quantile levels ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")));
    }
    if ensemble.n_samples() == 0 {
        return Err(Error::Input("predictive summary needs at least one sample".into()));
    }
    let m = ensemble.grid().len();
    let (mut mean, mut lower, mut upper) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
    for j in 0..m {
        let mut col = ensemble.column(j);
        mean.push(col.iter().sum::<f64>() / col.len() as f64);
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, lo));
        upper.push(quantile_sorted(&col, hi));
    }
    Ok(PredictiveSummary { grid: ensemble.grid().to_vec(), mean, lower, upper, levels })
}
