//! The Mercer prior `log p(theta) = -1/2 sum_n lambda_n^{-1} <u_theta, phi_n>^2`
//! and its unbiased stochastic estimator.
//!
//! One estimator draw samples `N` eigen-indices from `p(n)` and two
//! independent batches of `M1` and `M2` domain points:
//!
//! ```text
//! S = -1/2 * 1/N * sum_a 1/(lambda_{n_a} p(n_a)) * A_a * B_a
//! A_a = sum_b w(x_b) u(x_b) phi_{n_a}(x_b),   w(x) = 1/(M1 q(x))
//! ```
//!
//! and likewise `B_a` over the second batch. With `q` uniform on the domain,
//! `w = |Omega| / M1` and the expression reduces to the familiar
//! `|Omega|^2 / (N M1 M2)` prefactor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_net::{Field, ParamField};
use crate::rng::{Stream, STREAM_BATCH_A, STREAM_BATCH_B, STREAM_INDICES};
use crate::spectrum::{trapezoid_weights, uniform_grid, BasisSpec, Eigenbasis};

/// Distribution `p(n)` over the active eigen-indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexDistribution {
    #[default]
    Uniform,
    /// `p(n) ∝ n^{-exponent}`, normalised over the truncation.
    Zeta { exponent: f64 },
    /// `p(n) ∝ (1 - p)^{n - 1}`, normalised over the truncation.
    Geometric { p: f64 },
}

/// Proposal `q` for the domain batches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSampling {
    /// Uniform on the prior domain.
    #[default]
    Uniform,
    /// Gaussian on the real line; inner products are then taken over all of R.
    Gaussian { mean: f64, sd: f64 },
}

/// Serializable prior configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub basis: BasisSpec,
    /// Eigen-index batch size `N`.
    pub n_indices: usize,
    /// First domain batch size `M1`.
    pub m1: usize,
    /// Second domain batch size `M2`.
    pub m2: usize,
    #[serde(default)]
    pub index_dist: IndexDistribution,
    #[serde(default)]
    pub sampling: DomainSampling,
    /// Integration domain; defaults to the basis domain.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
}

/// Record of one estimator evaluation; enough to replay it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDraw {
    pub value: f64,
    pub indices: Vec<usize>,
    pub points_a: Vec<f64>,
    pub points_b: Vec<f64>,
    pub stream: Stream,
}

/// A configured Mercer prior.
#[derive(Clone, Debug)]
pub struct MercerPrior {
    basis: Eigenbasis,
    domain: (f64, f64),
    n_indices: usize,
    m1: usize,
    m2: usize,
    index_dist: IndexDistribution,
    sampling: DomainSampling,
    support: Vec<usize>,
    mass: Vec<f64>,
    cdf: Vec<f64>,
    /// `1 / (lambda_n p(n))` for each support index.
    coef: Vec<f64>,
}

impl MercerPrior {
    pub fn new(
        basis: Eigenbasis,
        n_indices: usize,
        m1: usize,
        m2: usize,
        index_dist: IndexDistribution,
    ) -> Result<Self> {
        let domain = basis.domain();
        Self::build(basis, domain, n_indices, m1, m2, index_dist, DomainSampling::Uniform)
    }

    pub fn from_config(cfg: &PriorConfig) -> Result<Self> {
        let basis = Eigenbasis::from_spec(&cfg.basis)?;
        let domain = cfg.domain.map_or(basis.domain(), |[a, b]| (a, b));
        Self::build(
            basis,
            domain,
            cfg.n_indices,
            cfg.m1,
            cfg.m2,
            cfg.index_dist.clone(),
            cfg.sampling.clone(),
        )
    }

    pub fn with_domain(self, a: f64, b: f64) -> Result<Self> {
        Self::build(self.basis, (a, b), self.n_indices, self.m1, self.m2, self.index_dist, self.sampling)
    }

    pub fn with_sampling(self, sampling: DomainSampling) -> Result<Self> {
        Self::build(self.basis, self.domain, self.n_indices, self.m1, self.m2, self.index_dist, sampling)
    }

    pub fn with_batches(self, n_indices: usize, m1: usize, m2: usize) -> Result<Self> {
        Self::build(self.basis, self.domain, n_indices, m1, m2, self.index_dist, self.sampling)
    }

    /// Same batching and sampling on a different basis.
    pub fn with_basis(&self, basis: Eigenbasis) -> Result<Self> {
        Self::build(
            basis,
            self.domain,
            self.n_indices,
            self.m1,
            self.m2,
            self.index_dist.clone(),
            self.sampling.clone(),
        )
    }

    fn build(
        basis: Eigenbasis,
        domain: (f64, f64),
        n_indices: usize,
        m1: usize,
        m2: usize,
        index_dist: IndexDistribution,
        sampling: DomainSampling,
    ) -> Result<Self> {
        if n_indices == 0 || m1 == 0 || m2 == 0 {
            return Err(Error::Config("batch sizes N, M1, M2 must all be at least 1".into()));
        }
        if !(domain.1 > domain.0) {
            return Err(Error::Config(format!("empty prior domain [{}, {}]", domain.0, domain.1)));
        }
        if let DomainSampling::Gaussian { sd, .. } = sampling {
            if !(sd > 0.0) {
                return Err(Error::Config("Gaussian proposal needs sd > 0".into()));
            }
        }
        let support = basis.active_indices().to_vec();
        if support.is_empty() {
            return Err(Error::Config("basis has no eigenvalues above the floor".into()));
        }
        let weights: Vec<f64> = match &index_dist {
            IndexDistribution::Uniform => vec![1.0; support.len()],
            IndexDistribution::Zeta { exponent } => {
                if !(*exponent > 0.0) {
                    return Err(Error::Config("zeta exponent must be positive".into()));
                }
                support.iter().map(|&n| (n as f64).powf(-exponent)).collect()
            }
            IndexDistribution::Geometric { p } => {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::Config("geometric parameter must lie in (0, 1)".into()));
                }
                support.iter().map(|&n| (1.0 - p).powi(n as i32 - 1)).collect()
            }
        };
        let total: f64 = weights.iter().sum();
        let mass: Vec<f64> = weights.iter().map(|w| w / total).collect();
        if mass.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("index distribution assigns zero mass to a used index".into()));
        }
        let mut cdf = Vec::with_capacity(mass.len());
        let mut acc = 0.0;
        for m in &mass {
            acc += m;
            cdf.push(acc);
        }
        *cdf.last_mut().expect("non-empty") = 1.0;
        let coef = support
            .iter()
            .zip(&mass)
            .map(|(&n, p)| 1.0 / (basis.lambda(n) * p))
            .collect();
        Ok(MercerPrior {
            basis,
            domain,
            n_indices,
            m1,
            m2,
            index_dist,
            sampling,
            support,
            mass,
            cdf,
            coef,
        })
    }

    pub fn basis(&self) -> &Eigenbasis {
        &self.basis
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn volume(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn batch_sizes(&self) -> (usize, usize, usize) {
        (self.n_indices, self.m1, self.m2)
    }

    pub fn index_distribution(&self) -> &IndexDistribution {
        &self.index_dist
    }

    pub fn sampling(&self) -> &DomainSampling {
        &self.sampling
    }

    /// Eigen-indices the estimator can draw.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// `p(n)` for `n` in the support, zero otherwise.
    pub fn index_mass(&self, n: usize) -> f64 {
        self.support
            .binary_search(&n)
            .map_or(0.0, |k| self.mass[k])
    }

    fn slot(&self, n: usize) -> Result<usize> {
        self.support.binary_search(&n).map_err(|_| {
            Error::Input(format!("index {n} is not in the support of the index distribution"))
        })
    }

    /// Draws `N` support positions (not eigen-indices) from `p(n)`.
    fn draw_slots(&self, stream: Stream) -> Vec<usize> {
        let mut rng = stream.substream(STREAM_INDICES);
        (0..self.n_indices)
            .map(|_| {
                let u: f64 = rng.random();
                self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
            })
            .collect()
    }

    fn draw_points(&self, stream: Stream, id: u64, m: usize) -> Vec<f64> {
        let mut rng = stream.substream(id);
        match self.sampling {
            DomainSampling::Uniform => {
                let (a, b) = self.domain;
                (0..m).map(|_| a + (b - a) * rng.random::<f64>()).collect()
            }
            DomainSampling::Gaussian { mean, sd } => (0..m)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// Importance weight `1 / (M q(x))`.
    fn weight(&self, x: f64, m: usize) -> f64 {
        match self.sampling {
            DomainSampling::Uniform => self.volume() / m as f64,
            DomainSampling::Gaussian { mean, sd } => {
                let z = (x - mean) / sd;
                let q = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                1.0 / (m as f64 * q)
            }
        }
    }

    /// Draws the random inputs of one estimator evaluation.
    pub fn draw_inputs(&self, stream: Stream) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let slots = self.draw_slots(stream);
        let indices = slots.iter().map(|&s| self.support[s]).collect();
        let a = self.draw_points(stream, STREAM_BATCH_A, self.m1);
        let b = self.draw_points(stream, STREAM_BATCH_B, self.m2);
        (indices, a, b)
    }

    /// Rows `w(x_b) phi_{n_a}(x_b)` for each drawn index, row-major `N x M`.
    fn weighted_phi(&self, indices: &[usize], xs: &[f64]) -> Vec<f64> {
        let w: Vec<f64> = xs.iter().map(|&x| self.weight(x, xs.len())).collect();
        let mut table = Vec::with_capacity(indices.len() * xs.len());
        for &n in indices {
            table.extend(xs.iter().zip(&w).map(|(&x, wx)| wx * self.basis.phi(n, x)));
        }
        table
    }

    fn row_dots(table: &[f64], us: &[f64]) -> Vec<f64> {
        if us.is_empty() {
            return vec![0.0; table.len()];
        }
        table
            .chunks_exact(us.len())
            .map(|row| row.iter().zip(us).map(|(t, u)| t * u).sum())
            .collect()
    }

    fn coefficients(&self, indices: &[usize]) -> Result<Vec<f64>> {
        indices.iter().map(|&n| Ok(self.coef[self.slot(n)?])).collect()
    }

    fn combine(coef: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let total: f64 = coef.iter().zip(a).zip(b).map(|((c, x), y)| c * x * y).sum();
        -0.5 * total / coef.len() as f64
    }

    fn value_from(&self, indices: &[usize], xa: &[f64], ua: &[f64], xb: &[f64], ub: &[f64]) -> Result<f64> {
        let coef = self.coefficients(indices)?;
        let a = Self::row_dots(&self.weighted_phi(indices, xa), ua);
        let b = Self::row_dots(&self.weighted_phi(indices, xb), ub);
        Ok(Self::combine(&coef, &a, &b))
    }

    /// One unbiased draw of `log p(theta)` (up to its normalising constant).
    pub fn estimate<F: Field + ?Sized>(&self, field: &F, stream: Stream) -> Result<EstimatorDraw> {
        let (indices, points_a, points_b) = self.draw_inputs(stream);
        let ua = field.values(&points_a);
        let ub = field.values(&points_b);
        let value = self.value_from(&indices, &points_a, &ua, &points_b, &ub)?;
        Ok(EstimatorDraw {
            value,
            indices,
            points_a,
            points_b,
            stream,
        })
    }

    /// Recomputes the estimator on recorded draws.
    pub fn replay<F: Field + ?Sized>(&self, field: &F, draw: &EstimatorDraw) -> Result<f64> {
        let ua = field.values(&draw.points_a);
        let ub = field.values(&draw.points_b);
        self.value_from(&draw.indices, &draw.points_a, &ua, &draw.points_b, &ub)
    }

    /// Estimator value and its exact gradient in theta on the same draws.
    pub fn estimate_with_grad<P: ParamField + ?Sized>(
        &self,
        field: &P,
        theta: &[f64],
        stream: Stream,
    ) -> Result<(EstimatorDraw, Vec<f64>)> {
        let (indices, points_a, points_b) = self.draw_inputs(stream);
        let draw = EstimatorDraw {
            value: 0.0,
            indices,
            points_a,
            points_b,
            stream,
        };
        self.replay_with_grad(field, theta, draw)
    }

    /// Value and gradient on recorded draws (the `value` field is recomputed).
    pub fn replay_with_grad<P: ParamField + ?Sized>(
        &self,
        field: &P,
        theta: &[f64],
        mut draw: EstimatorDraw,
    ) -> Result<(EstimatorDraw, Vec<f64>)> {
        if theta.len() != field.n_params() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, field needs {}",
                theta.len(),
                field.n_params()
            )));
        }
        let (xa, xb) = (&draw.points_a, &draw.points_b);
        let ua = field.values(theta, xa);
        let ub = field.values(theta, xb);
        let coef = self.coefficients(&draw.indices)?;
        let ta = self.weighted_phi(&draw.indices, xa);
        let tb = self.weighted_phi(&draw.indices, xb);
        let a = Self::row_dots(&ta, &ua);
        let b = Self::row_dots(&tb, &ub);
        draw.value = Self::combine(&coef, &a, &b);

        // d S / d u(x) for every point of both batches.
        let scale = -0.5 / draw.indices.len() as f64;
        let mut cot = vec![0.0; xa.len() + xb.len()];
        let (ca, cb) = cot.split_at_mut(xa.len());
        for k in 0..coef.len() {
            let c = scale * coef[k];
            let (fa, fb) = (c * b[k], c * a[k]);
            for (cj, t) in ca.iter_mut().zip(&ta[k * xa.len()..(k + 1) * xa.len()]) {
                *cj += fa * t;
            }
            for (cj, t) in cb.iter_mut().zip(&tb[k * xb.len()..(k + 1) * xb.len()]) {
                *cj += fb * t;
            }
        }
        let mut xs = Vec::with_capacity(xa.len() + xb.len());
        xs.extend_from_slice(xa);
        xs.extend_from_slice(xb);
        let grad = field.grad(theta, &xs, &cot);
        Ok((draw, grad))
    }

    /// Unbiased estimate of `sum_n g_n <u, phi_n>^2`, with `g` aligned to
    /// [`MercerPrior::support`], on the same index and point batching as the
    /// log-prior estimator.
    pub fn quadratic_estimate<F: Field + ?Sized>(&self, field: &F, g: &[f64], stream: Stream) -> Result<f64> {
        if g.len() != self.support.len() {
            return Err(Error::Config(format!(
                "{} weights for {} support indices",
                g.len(),
                self.support.len()
            )));
        }
        let slots = self.draw_slots(stream);
        let indices: Vec<usize> = slots.iter().map(|&s| self.support[s]).collect();
        let xa = self.draw_points(stream, STREAM_BATCH_A, self.m1);
        let xb = self.draw_points(stream, STREAM_BATCH_B, self.m2);
        let a = Self::row_dots(&self.weighted_phi(&indices, &xa), &field.values(&xa));
        let b = Self::row_dots(&self.weighted_phi(&indices, &xb), &field.values(&xb));
        let total: f64 = slots
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(&s, (x, y))| g[s] / self.mass[s] * x * y)
            .sum();
        Ok(total / slots.len() as f64)
    }

    /// A deliberately biased variant that reuses the first batch for both
    /// inner sums, squaring one estimate.
    pub fn estimate_shared_batch<F: Field + ?Sized>(&self, field: &F, stream: Stream) -> Result<f64> {
        let (indices, points_a, _) = self.draw_inputs(stream);
        let ua = field.values(&points_a);
        let coef = self.coefficients(&indices)?;
        let a = Self::row_dots(&self.weighted_phi(&indices, &points_a), &ua);
        Ok(Self::combine(&coef, &a, &a))
    }

    /// Inner products `<u, phi_n>` over the prior domain for every support
    /// index, by the trapezoid rule on `grid_size` points.
    pub fn projections<F: Field + ?Sized>(&self, field: &F, grid_size: usize) -> Result<Vec<f64>> {
        if grid_size < 2 {
            return Err(Error::Config("quadrature needs at least 2 points".into()));
        }
        let (a, b) = self.domain;
        let grid = uniform_grid(a, b, grid_size);
        let w = trapezoid_weights(a, b, grid_size);
        let u = field.values(&grid);
        Ok(self
            .support
            .iter()
            .map(|&n| {
                grid.iter()
                    .zip(&u)
                    .zip(&w)
                    .map(|((&x, ux), wx)| wx * ux * self.basis.phi(n, x))
                    .sum()
            })
            .collect())
    }

    /// `-1/2 sum_n lambda_n^{-1} (int u phi_n)^2` by dense quadrature.
    pub fn exact<F: Field + ?Sized>(&self, field: &F, grid_size: usize) -> Result<f64> {
        let proj = self.projections(field, grid_size)?;
        Ok(-0.5
            * self
                .support
                .iter()
                .zip(&proj)
                .map(|(&n, c)| c * c / self.basis.lambda(n))
                .sum::<f64>())
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
