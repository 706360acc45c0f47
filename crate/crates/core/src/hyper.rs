//! Hyperparameter scores for the Mercer prior under a flat hyperprior.
//!
//! With energy `E(theta; lambda) = 1/2 <u, S^-1 u>` and partition function
//! `Z(lambda)`, the evidence score is
//! `E_post[-dE/dlambda] - E_prior[-dE/dlambda]`; the prior term is the
//! derivative of `log Z`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field_net::{FeatureFn, Field, LinearFeatures, ParamField};
use crate::mercer::{mean_and_se, MercerPrior};
use crate::rng::Stream;
use crate::spectrum::{Eigenbasis, Hyperparameter};

/// `d lambda_n / d h` for every support index of `prior`.
pub fn eigen_sensitivities(prior: &MercerPrior, h: Hyperparameter) -> Result<Vec<f64>> {
    prior
        .support()
        .iter()
        .map(|&n| prior.basis().eigenvalue_derivative(n, h))
        .collect()
}

fn energy_weights(prior: &MercerPrior, dlambda: &[f64]) -> Result<Vec<f64>> {
    if dlambda.len() != prior.support().len() {
        return Err(Error::Config(format!(
            "{} eigenvalue derivatives for {} support indices",
            dlambda.len(),
            prior.support().len()
        )));
    }
    Ok(prior
        .support()
        .iter()
        .zip(dlambda)
        .map(|(&n, d)| {
            let l = prior.basis().lambda(n);
            -0.5 * d / (l * l)
        })
        .collect())
}

/// Unbiased estimate of `dE/dh = -1/2 sum_n (dlambda_n / lambda_n^2) <u, phi_n>^2`.
pub fn energy_grad_lambda<F: Field + ?Sized>(
    field: &F,
    prior: &MercerPrior,
    dlambda: &[f64],
    stream: Stream,
) -> Result<f64> {
    prior.quadratic_estimate(field, &energy_weights(prior, dlambda)?, stream)
}

/// `dE/dh` with the inner products computed by dense quadrature.
pub fn energy_grad_exact<F: Field + ?Sized>(
    field: &F,
    prior: &MercerPrior,
    dlambda: &[f64],
    grid_size: usize,
) -> Result<f64> {
    let g = energy_weights(prior, dlambda)?;
    let proj = prior.projections(field, grid_size)?;
    Ok(g.iter().zip(&proj).map(|(g, c)| g * c * c).sum())
}

/// Estimated `dE/dh` at each parameter sample; sample `i` uses `stream.child(i)`.
pub fn energy_grads<P: ParamField + ?Sized>(
    field: &P,
    samples: &[Vec<f64>],
    prior: &MercerPrior,
    dlambda: &[f64],
    stream: Stream,
    exec: Execution,
) -> Result<Vec<f64>> {
    exec.map_range(samples.len(), |i| {
        let bound = BoundSlice { field, theta: &samples[i] };
        energy_grad_lambda(&bound, prior, dlambda, stream.child(i as u64))
    })
    .into_iter()
    .collect()
}

/// Batched evaluation of an unsized parameter field at fixed parameters.
struct BoundSlice<'a, P: ?Sized> {
    field: &'a P,
    theta: &'a [f64],
}

impl<P: ParamField + ?Sized> Field for BoundSlice<'_, P> {
    fn value(&self, x: f64) -> f64 {
        self.field.values(self.theta, &[x])[0]
    }

    fn values(&self, xs: &[f64]) -> Vec<f64> {
        self.field.values(self.theta, xs)
    }
}

/// A Monte Carlo score with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEstimate {
    pub value: f64,
    pub se: f64,
    pub n_posterior: usize,
    pub n_prior: usize,
}

/// `mean(-dE)` over posterior samples minus `mean(-dE)` over prior samples,
/// plus the hyperprior score `d log p(h)` (zero when flat).
pub fn marginal_score(posterior_grads: &[f64], prior_grads: &[f64], hyperprior_score: f64) -> Result<ScoreEstimate> {
    if posterior_grads.len() < 2 || prior_grads.len() < 2 {
        return Err(Error::Input("score needs at least 2 posterior and 2 prior samples".into()));
    }
    let (mp, sp) = mean_and_se(posterior_grads);
    let (mq, sq) = mean_and_se(prior_grads);
    Ok(ScoreEstimate {
        value: -mp + mq + hyperprior_score,
        se: (sp * sp + sq * sq).sqrt(),
        n_posterior: posterior_grads.len(),
        n_prior: prior_grads.len(),
    })
}

/// The score that drops the partition function: `mean(-dE)` over the
/// posterior only. Biased whenever `Z` depends on the hyperparameter.
pub fn naive_score(posterior_grads: &[f64]) -> Result<ScoreEstimate> {
    if posterior_grads.len() < 2 {
        return Err(Error::Input("score needs at least 2 posterior samples".into()));
    }
    let (m, se) = mean_and_se(posterior_grads);
    Ok(ScoreEstimate { value: -m, se, n_posterior: posterior_grads.len(), n_prior: 0 })
}

/// Analytic `d log Z` against its Monte Carlo prior expectation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCheck {
    /// `-1/2 tr(A^-1 dA)`.
    pub lhs: f64,
    /// `-mean(dE)` over prior draws.
    pub rhs: f64,
    pub se: f64,
    pub gap: f64,
}

/// Linear-in-parameters field `u = sum_j theta_j psi_j` under a Mercer prior.
///
/// The parameter density is Gaussian with precision
/// `A = P^T diag(1/lambda) P`, where `P_nj = <phi_n, psi_j>`.
#[derive(Clone)]
pub struct LinearGaussian {
    field: LinearFeatures,
    prior: MercerPrior,
    /// `support x D` projections.
    proj: DMatrix<f64>,
}

impl LinearGaussian {
    pub fn new(field: LinearFeatures, prior: MercerPrior, grid_size: usize) -> Result<Self> {
        let d = field.len();
        let support = prior.support().len();
        let mut proj = DMatrix::zeros(support, d);
        for j in 0..d {
            let f = field.clone();
            let col = prior.projections(&move |x: f64| f.feature(j, x), grid_size)?;
            proj.set_column(j, &DVector::from_vec(col));
        }
        Ok(LinearGaussian { field, prior, proj })
    }

    /// Features `phi_1, ..., phi_d` of the prior's own basis; the precision is
    /// then diagonal.
    pub fn eigenfunction_features(basis: &Eigenbasis, d: usize) -> LinearFeatures {
        let features = (1..=d)
            .map(|n| {
                let b = basis.clone();
                Arc::new(move |x: f64| b.phi(n, x)) as FeatureFn
            })
            .collect();
        LinearFeatures::new(features)
    }

    pub fn field(&self) -> &LinearFeatures {
        &self.field
    }

    pub fn prior(&self) -> &MercerPrior {
        &self.prior
    }

    /// Same features and projections under another basis with the same eigenfunctions.
    pub fn with_basis(&self, basis: Eigenbasis) -> Result<Self> {
        Ok(LinearGaussian { field: self.field.clone(), prior: self.prior.with_basis(basis)?, proj: self.proj.clone() })
    }

    /// `P^T diag(w) P` with `w(row, n)` evaluated per support row.
    fn weighted_gram(&self, w: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        let mut scaled = self.proj.clone();
        for (r, &n) in self.prior.support().iter().enumerate() {
            let c = w(r, n);
            for x in scaled.row_mut(r).iter_mut() {
                *x *= c;
            }
        }
        let a = self.proj.transpose() * scaled;
        (&a + a.transpose()) * 0.5
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let basis = self.prior.basis();
        self.weighted_gram(|_, n| 1.0 / basis.lambda(n))
    }

    /// `dA/dh`, with `dlambda` aligned to the prior support.
    pub fn precision_derivative(&self, dlambda: &[f64]) -> Result<DMatrix<f64>> {
        let support = self.prior.support();
        if dlambda.len() != support.len() {
            return Err(Error::Config("eigenvalue derivatives do not match the support".into()));
        }
        let basis = self.prior.basis();
        Ok(self.weighted_gram(|r, n| {
            let l = basis.lambda(n);
            -dlambda[r] / (l * l)
        }))
    }

    fn cholesky(&self, a: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        a.cholesky()
            .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))
    }

    /// `d log Z / dh = -1/2 tr(A^-1 dA)`.
    pub fn grad_log_partition(&self, dlambda: &[f64]) -> Result<f64> {
        let chol = self.cholesky(self.precision())?;
        let da = self.precision_derivative(dlambda)?;
        Ok(-0.5 * chol.solve(&da).trace())
    }

    /// Exact `dE/dh = 1/2 theta^T dA theta`.
    pub fn energy_grad_exact(&self, theta: &[f64], dlambda: &[f64]) -> Result<f64> {
        let t = DVector::from_column_slice(theta);
        Ok(0.5 * (t.transpose() * self.precision_derivative(dlambda)? * &t)[(0, 0)])
    }

    /// Draws `theta ~ N(mean, P^-1)` given the factor of a precision `P`.
    fn gaussian_draws(
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        mean: &DVector<f64>,
        count: usize,
        stream: Stream,
    ) -> Vec<Vec<f64>> {
        let lt = chol.l().transpose();
        let d = mean.len();
        (0..count)
            .map(|i| {
                let mut rng = stream.child(i as u64).rng();
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = lt.solve_upper_triangular(&z).expect("nonsingular factor");
                (x + mean).iter().copied().collect()
            })
            .collect()
    }

    pub fn sample_prior(&self, count: usize, stream: Stream) -> Result<Vec<Vec<f64>>> {
        let chol = self.cholesky(self.precision())?;
        Ok(Self::gaussian_draws(&chol, &DVector::zeros(self.field.len()), count, stream))
    }

    fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), self.field.len(), |i, j| self.field.feature(j, xs[i]))
    }

    /// Posterior mean and precision for `y = u(x) + N(0, sigma^2)`.
    pub fn posterior(&self, xs: &[f64], ys: &[f64], sigma: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if xs.len() != ys.len() {
            return Err(Error::Input("inputs and outputs differ in length".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("noise sd must be positive, got {sigma}")));
        }
        let psi = self.design(xs);
        let prec = self.precision() + psi.transpose() * &psi / (sigma * sigma);
        let rhs = psi.transpose() * DVector::from_column_slice(ys) / (sigma * sigma);
        let mean = self.cholesky(prec.clone())?.solve(&rhs);
        Ok((mean, prec))
    }

    pub fn sample_posterior(&self, xs: &[f64], ys: &[f64], sigma: f64, count: usize, stream: Stream) -> Result<Vec<Vec<f64>>> {
        let (mean, prec) = self.posterior(xs, ys, sigma)?;
        let chol = self.cholesky(prec)?;
        Ok(Self::gaussian_draws(&chol, &mean, count, stream))
    }

    /// `log N(y; 0, sigma^2 I + Psi A^-1 Psi^T)`.
    pub fn log_evidence(&self, xs: &[f64], ys: &[f64], sigma: f64) -> Result<f64> {
        let psi = self.design(xs);
        let ainv = self.cholesky(self.precision())?.inverse();
        let n = xs.len();
        let cov = DMatrix::identity(n, n) * (sigma * sigma) + &psi * ainv * psi.transpose();
        let chol = self.cholesky(cov)?;
        let y = DVector::from_column_slice(ys);
        let quad = y.dot(&chol.solve(&y));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(-0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Compares `d log Z` with `-E_prior[dE]`, the expectation taken over exact
/// prior draws with the energy gradient estimated by the Mercer batching.
pub fn partition_grad_check(
    model: &LinearGaussian,
    dlambda: &[f64],
    n_prior: usize,
    stream: Stream,
    exec: Execution,
) -> Result<PartitionCheck> {
    if n_prior < 2 {
        return Err(Error::Input("partition check needs at least 2 prior draws".into()));
    }
    let lhs = model.grad_log_partition(dlambda)?;
    let samples = model.sample_prior(n_prior, stream.child(0))?;
    let grads = energy_grads(model.field(), &samples, model.prior(), dlambda, stream.child(1), exec)?;
    let (m, se) = mean_and_se(&grads);
    Ok(PartitionCheck { lhs, rhs: -m, se, gap: (lhs + m).abs() })
}
