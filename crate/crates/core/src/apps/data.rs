//! Datasets of `(input, output[, sd])` pairs and synthetic generators.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// Per-point noise standard deviation, when measured.
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
}

/// Affine maps applied by [`Dataset::standardized`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub t_min: f64,
    pub t_max: f64,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl Scaling {
    pub fn input(&self, t: f64) -> f64 {
        (t - self.t_min) / (self.t_max - self.t_min)
    }

    pub fn output(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_sd
    }

    pub fn output_inverse(&self, z: f64) -> f64 {
        self.y_mean + self.y_sd * z
    }
}

impl Dataset {
    pub fn new(t: Vec<f64>, y: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Input(format!("{} inputs but {} outputs", t.len(), y.len())));
        }
        if let Some(s) = &sigma {
            if s.len() != t.len() {
                return Err(Error::Input(format!("{} noise values for {} points", s.len(), t.len())));
            }
            if let Some(i) = s.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Input(format!("noise sd at row {i} must be positive")));
            }
        }
        if let Some(i) = t.iter().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at position {i}")));
        }
        Ok(Dataset { t, y, sigma })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Reads two or three numeric columns (input, output[, sd]); a
    /// non-numeric first row is treated as a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let (mut t, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
        let mut width = None;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(Error::Input(format!("row {}: {e}", row + 1))),
            };
            if !(values.len() == 2 || values.len() == 3) {
                return Err(Error::Input(format!("row {} has {} columns, expected 2 or 3", row + 1, values.len())));
            }
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(Error::Input(format!("row {} changes the column count", row + 1)));
            }
            t.push(values[0]);
            y.push(values[1]);
            if values.len() == 3 {
                s.push(values[2]);
            }
        }
        let sigma = (width == Some(3)).then_some(s);
        Self::new(t, y, sigma)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Inputs rescaled to `[0, 1]` and outputs standardized; noise values are
    /// divided by the output sd.
    pub fn standardized(&self) -> Result<(Dataset, Scaling)> {
        if self.len() < 2 {
            return Err(Error::Input("standardizing needs at least 2 points".into()));
        }
        let t_min = self.t.iter().copied().fold(f64::INFINITY, f64::min);
        let t_max = self.t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (y_mean, y_se) = crate::mercer::mean_and_se(&self.y);
        let y_sd = y_se * (self.len() as f64).sqrt();
        if !(t_max > t_min) || !(y_sd > 0.0) {
            return Err(Error::Input("inputs or outputs are constant".into()));
        }
        let sc = Scaling { t_min, t_max, y_mean, y_sd };
        let data = Dataset {
            t: self.t.iter().map(|&t| sc.input(t)).collect(),
            y: self.y.iter().map(|&y| sc.output(y)).collect(),
            sigma: self.sigma.as_ref().map(|s| s.iter().map(|v| v / y_sd).collect()),
        };
        Ok((data, sc))
    }

    /// Points with `lo <= t <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> Dataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.t[i] >= lo && self.t[i] <= hi).collect();
        Dataset {
            t: keep.iter().map(|&i| self.t[i]).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
            sigma: self.sigma.as_ref().map(|s| keep.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Noise sd of point `i`, falling back to `default`.
    pub fn sd(&self, i: usize, default: f64) -> f64 {
        self.sigma.as_ref().map_or(default, |s| s[i])
    }
}

fn normals(n: usize, stream: Stream) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean of the heteroscedastic generator.
pub fn hetero_mean(t: f64) -> f64 {
    (2.0 * std::f64::consts::PI * t).sin()
}

/// Noise sd of the heteroscedastic generator.
pub fn hetero_sd(t: f64) -> f64 {
    0.1 + 0.2 * t
}

/// `n` equispaced points on `[0, 1]` with `y = sin(2 pi t) + (0.1 + 0.2 t) eps`.
pub fn hetero_synthetic(n: usize, seed: u64) -> Dataset {
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n.max(2) - 1) as f64).collect();
    let eps = normals(n, Stream::new(seed));
    let y = t.iter().zip(&eps).map(|(&t, e)| hetero_mean(t) + hetero_sd(t) * e).collect();
    Dataset { t, y, sigma: None }
}

/// Trend `0.95 t` plus a sinusoid of the given period and amplitude, with
/// Gaussian noise, on `n` equispaced points of `[0, 1]`.
pub fn periodic_synthetic(n: usize, period: f64, amplitude: f64, noise: f64, seed: u64) -> Dataset {
    let t: Vec<f64> = (0..n).map(|i| i as f64 / (n.max(2) - 1) as f64).collect();
    let eps = normals(n, Stream::new(seed));
    let y = t
        .iter()
        .zip(&eps)
        .map(|(&t, e)| periodic_truth(t, period, amplitude) + noise * e)
        .collect();
    Dataset { t, y, sigma: None }
}

pub fn periodic_truth(t: f64, period: f64, amplitude: f64) -> f64 {
    0.95 * t + amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
}
