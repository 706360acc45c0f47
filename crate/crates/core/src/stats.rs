//! Validation statistics for sample ensembles: empirical covariance, covariance
//! error maps, two-sample Kolmogorov–Smirnov tests and kernel density estimates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{gemm, Execution};
use crate::gp_oracle::Kernel;
use crate::rng::Stream;

/// Sample paths evaluated on a common grid; row `i` of `values` is sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEnsemble {
    values: DMatrix<f64>,
    grid: Vec<f64>,
    config_hash: Option<String>,
}

impl SampleEnsemble {
    pub fn new(values: DMatrix<f64>, grid: Vec<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::Input(format!(
                "ensemble has {} columns for {} grid points",
                values.ncols(),
                grid.len()
            )));
        }
        if let Some(i) = grid.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Input(format!(
                "grid must be strictly increasing (position {})",
                i + 1
            )));
        }
        Ok(SampleEnsemble { values, grid, config_hash: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], grid: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::Input(format!("sample {i} has {} values, expected {m}", rows[i].len())));
        }
        let values = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        Self::new(values, grid)
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    /// Values of every sample at grid column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &g) in self.grid.iter().enumerate() {
            if (g - t).abs() < (self.grid[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Unbiased empirical covariance `Q = (1/(N_F-1)) sum (u - mean)(u - mean)^T`.
///
/// The upper triangle is mirrored, so the result is exactly symmetric.
pub fn empirical_covariance(ensemble: &SampleEnsemble) -> Result<DMatrix<f64>> {
    let n = ensemble.n_samples();
    if n < 2 {
        return Err(Error::Input(format!("covariance needs at least 2 samples, got {n}")));
    }
    let m = ensemble.grid.len();
    let v = &ensemble.values;
    let mut centered = v.clone();
    for j in 0..m {
        let mean = v.column(j).sum() / n as f64;
        for x in centered.column_mut(j).iter_mut() {
            *x -= mean;
        }
    }
    // q (m x m) = centered^T centered; nalgebra storage is column-major.
    let mut q = vec![0.0; m * m];
    gemm(m, n, m, centered.as_slice(), n, 1, centered.as_slice(), 1, n, 0.0, &mut q, m);
    let scale = 1.0 / (n as f64 - 1.0);
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        q[a * m + b] * scale
    }))
}

/// Pointwise `|Q - k|` with its maximum.
#[derive(Clone, Debug)]
pub struct ErrorMap {
    pub errors: DMatrix<f64>,
    pub max: f64,
    /// Row and column of the maximum.
    pub argmax: (usize, usize),
    /// Grid coordinates `(s, t)` of the maximum.
    pub location: (f64, f64),
}

impl ErrorMap {
    /// Largest error over entries with `|s - t| > min_gap`; zero if none.
    pub fn max_off_diagonal(&self, grid: &[f64], min_gap: f64) -> f64 {
        let m = grid.len();
        let mut best = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                if (grid[i] - grid[j]).abs() > min_gap {
                    best = best.max(self.errors[(i, j)]);
                }
            }
        }
        best
    }
}

pub fn covariance_error_map(q: &DMatrix<f64>, kernel: &Kernel, grid: &[f64]) -> Result<ErrorMap> {
    error_map_against(q, &kernel.matrix(grid), grid)
}

/// Error map against an explicit reference matrix.
pub fn error_map_against(q: &DMatrix<f64>, reference: &DMatrix<f64>, grid: &[f64]) -> Result<ErrorMap> {
    let m = grid.len();
    if q.shape() != (m, m) || reference.shape() != (m, m) {
        return Err(Error::Input(format!(
            "matrices {:?} and {:?} do not match a {m}-point grid",
            q.shape(),
            reference.shape()
        )));
    }
    let errors = (q - reference).abs();
    let mut argmax = (0, 0);
    let mut max = f64::NEG_INFINITY;
    for j in 0..m {
        for i in 0..m {
            if errors[(i, j)] > max {
                max = errors[(i, j)];
                argmax = (i, j);
            }
        }
    }
    let max = max.max(0.0);
    let location = if m > 0 { (grid[argmax.0], grid[argmax.1]) } else { (f64::NAN, f64::NAN) };
    Ok(ErrorMap { errors, max, argmax, location })
}

/// Asymptotic two-sample KS coefficient `c(alpha) = sqrt(-ln(alpha/2) / 2)`;
/// `c(0.05) = 1.358`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.3 {
        // Series below converges slowly here and the tail is 1 to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    /// `sup |ECDF_a - ECDF_b|`.
    pub statistic: f64,
    /// `c(alpha) sqrt((n1 + n2) / (n1 n2))`.
    pub critical: f64,
    pub reject: bool,
    /// Asymptotic p-value.
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("KS test needs two nonempty samples".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!("significance level must be in (0, 1), got {alpha}")));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Input("KS samples contain NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let critical = ks_coefficient(alpha) / ne.sqrt();
    Ok(KsResult {
        statistic: d,
        critical,
        reject: d > critical,
        p_value: kolmogorov_tail(ne.sqrt() * d),
    })
}

/// KS comparison of one time slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceResult {
    /// Requested time.
    pub time: f64,
    /// Grid point actually used.
    pub grid_time: f64,
    pub ks: KsResult,
}

impl SliceResult {
    pub fn pass(&self) -> bool {
        !self.ks.reject
    }
}

/// Compares the ensemble marginal at each time with draws from `reference`.
///
/// `reference(t, stream)` returns the reference sample for time `t`; slice `i`
/// receives `stream.child(i)`.
pub fn ks_slice_profile<R>(
    ensemble: &SampleEnsemble,
    times: &[f64],
    reference: R,
    stream: Stream,
    alpha: f64,
    exec: Execution,
) -> Result<Vec<SliceResult>>
where
    R: Fn(f64, Stream) -> Vec<f64> + Sync,
{
    exec.map_range(times.len(), |i| {
        let j = ensemble.nearest_index(times[i]);
        let t = ensemble.grid[j];
        let ks = ks_two_sample(&ensemble.column(j), &reference(t, stream.child(i as u64)), alpha)?;
        Ok(SliceResult { time: times[i], grid_time: t, ks })
    })
    .into_iter()
    .collect()
}

/// `count` draws from `N(0, variance)`; a point mass at zero if the variance is zero.
pub fn gaussian_reference(variance: f64, count: usize, stream: Stream) -> Vec<f64> {
    let sd = variance.max(0.0).sqrt();
    let mut rng = stream.rng();
    (0..count).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Slice profile against the Gaussian marginal `N(0, k(t, t))`.
pub fn ks_kernel_profile(
    ensemble: &SampleEnsemble,
    kernel: &Kernel,
    times: &[f64],
    reference_size: usize,
    stream: Stream,
    alpha: f64,
    exec: Execution,
) -> Result<Vec<SliceResult>> {
    ks_slice_profile(
        ensemble,
        times,
        |t, s| gaussian_reference(kernel.eval(t, t), reference_size, s),
        stream,
        alpha,
        exec,
    )
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`; zero for constant data.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate on `grid` with Silverman's bandwidth.
///
/// Constant samples fall back to a bandwidth of one grid spacing.
pub fn kde_marginal(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("KDE needs at least one sample".into()));
    }
    let mut h = silverman_bandwidth(samples);
    if !(h > 0.0) {
        h = if grid.len() > 1 {
            (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
        } else {
            1.0
        };
    }
    kde_with_bandwidth(samples, grid, h)
}

pub fn kde_with_bandwidth(samples: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("KDE needs at least one sample".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Input(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Contributions beyond 40 bandwidths underflow; restrict to that window.
    let reach = 40.0 * bandwidth;
    Ok(grid
        .iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&s| s < x - reach);
            let hi = sorted.partition_point(|&s| s <= x + reach);
            let sum: f64 = sorted[lo..hi]
                .iter()
                .map(|&s| {
                    let z = (x - s) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum();
            sum * norm
        })
        .collect())
}

/// Average ranks (ties share the mean rank), starting at 1.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = rank;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input("rank correlation needs two equal samples of size >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, sa) = mean_sd(&ra);
    let (mb, sb) = mean_sd(&rb);
    let cov = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    Ok(cov / (sa * sb))
}
