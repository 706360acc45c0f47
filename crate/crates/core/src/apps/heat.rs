//! Steady nonlinear heat conduction `d/dy (kappa(T) dT/dy) = 0` on `y in [0, 1]`
//! and the conductivity inverse problem.
//!
//! With the Kirchhoff transform `Theta(T) = int_{T_lo}^T kappa`, the solution
//! satisfies `Theta(T(y)) = y Theta(T_hi)`: the profile is obtained by
//! integrating `kappa` once and inverting a monotone function.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::field_net::{FieldNet, Fluctuation, ParamField};
use crate::mercer::MercerPrior;
use crate::rng::Stream;
use crate::sgld::LogDensityTerm;

pub const T_LO: f64 = 300.0;
pub const T_HI: f64 = 1900.0;

/// Default number of temperature intervals.
pub const RESOLUTION: usize = 4096;

/// `Theta` tabulated on a uniform temperature grid.
#[derive(Clone, Debug)]
pub struct KirchhoffProfile {
    t_lo: f64,
    h: f64,
    /// `Theta` at the `n + 1` nodes.
    theta: Vec<f64>,
    /// `kappa` at nodes and midpoints, `2n + 1` values.
    kappa: Vec<f64>,
}

impl KirchhoffProfile {
    /// Integrates `kappa`, given at the `2n + 1` equispaced points
    /// `t_lo + k h / 2`, with Simpson's rule on every interval.
    pub fn from_samples(kappa: Vec<f64>, t_lo: f64, t_hi: f64) -> Result<Self> {
        if kappa.len() < 3 || kappa.len() % 2 == 0 {
            return Err(Error::Config("need 2n + 1 conductivity samples with n >= 1".into()));
        }
        if !(t_hi > t_lo) {
            return Err(Error::Config(format!("empty temperature range [{t_lo}, {t_hi}]")));
        }
        let n = (kappa.len() - 1) / 2;
        let h = (t_hi - t_lo) / n as f64;
        if let Some(k) = kappa.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!(
                "conductivity {} at T = {} is not positive",
                kappa[k],
                t_lo + 0.5 * h * k as f64
            )));
        }
        let mut theta = Vec::with_capacity(n + 1);
        theta.push(0.0);
        for j in 0..n {
            let step = h / 6.0 * (kappa[2 * j] + 4.0 * kappa[2 * j + 1] + kappa[2 * j + 2]);
            theta.push(theta[j] + step);
        }
        Ok(KirchhoffProfile { t_lo, h, theta, kappa })
    }

    pub fn new(kappa: impl Fn(f64) -> f64, t_lo: f64, t_hi: f64, resolution: usize) -> Result<Self> {
        let pts = sample_points(t_lo, t_hi, resolution);
        Self::from_samples(pts.iter().map(|&t| kappa(t)).collect(), t_lo, t_hi)
    }

    pub fn intervals(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn t_hi(&self) -> f64 {
        self.t_lo + self.h * self.intervals() as f64
    }

    /// `Theta(T_hi)`, the heat flux through a unit-length slab.
    pub fn total(&self) -> f64 {
        self.theta[self.intervals()]
    }

    /// Temperature at position `y in [0, 1]`: monotone cubic Hermite
    /// interpolation of `Theta^-1` with node slopes `1 / kappa`.
    pub fn temperature(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Input(format!("position {y} outside [0, 1]")));
        }
        let n = self.intervals();
        if y == 0.0 {
            return Ok(self.t_lo);
        }
        if y == 1.0 {
            return Ok(self.t_hi());
        }
        let target = y * self.total();
        let j = (self.theta.partition_point(|&v| v <= target) - 1).min(n - 1);
        let (a, b) = (self.theta[j], self.theta[j + 1]);
        let dth = b - a;
        let secant = self.h / dth;
        // Fritsch-Carlson: slopes within 3x the secant keep the cubic monotone.
        let m0 = (1.0 / self.kappa[2 * j]).min(3.0 * secant);
        let m1 = (1.0 / self.kappa[2 * j + 2]).min(3.0 * secant);
        let u = (target - a) / dth;
        let (u2, u3) = (u * u, u * u * u);
        let t0 = self.t_lo + self.h * j as f64;
        let t1 = t0 + self.h;
        Ok((2.0 * u3 - 3.0 * u2 + 1.0) * t0
            + (u3 - 2.0 * u2 + u) * dth * m0
            + (-2.0 * u3 + 3.0 * u2) * t1
            + (u3 - u2) * dth * m1)
    }
}

/// The `2n + 1` nodes and midpoints where the conductivity is sampled.
pub fn sample_points(t_lo: f64, t_hi: f64, resolution: usize) -> Vec<f64> {
    let half = (t_hi - t_lo) / (2 * resolution) as f64;
    (0..=2 * resolution)
        .map(|k| if k == 2 * resolution { t_hi } else { t_lo + half * k as f64 })
        .collect()
}

/// Temperatures at `y_query` for conductivity `kappa` with `T(0) = t_lo` and
/// `T(1) = t_hi`.
pub fn kirchhoff_solve(
    kappa: impl Fn(f64) -> f64,
    y_query: &[f64],
    t_lo: f64,
    t_hi: f64,
    resolution: usize,
) -> Result<Vec<f64>> {
    if resolution == 0 {
        return Err(Error::Config("resolution must be at least 1".into()));
    }
    let profile = KirchhoffProfile::new(kappa, t_lo, t_hi, resolution)?;
    y_query.iter().map(|&y| profile.temperature(y)).collect()
}

/// A measured heat flux `Theta(T_hi)` with its noise sd.
///
/// Temperatures alone determine `kappa` only up to a constant factor; a flux
/// measurement fixes the scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxObservation {
    pub value: f64,
    pub sd: f64,
}

/// Conductivity network over scaled temperature `s = (T - T_lo) / (T_hi - T_lo)`
/// with a Mercer prior on its fluctuation, observed through the heat equation.
pub struct InverseModel {
    net: FieldNet,
    fluct: Fluctuation,
    prior: MercerPrior,
    /// Positions `y_i` and measured temperatures `T_i`.
    data: Dataset,
    sigma: f64,
    flux: Option<FluxObservation>,
    resolution: usize,
    batch: Option<usize>,
}

impl InverseModel {
    pub fn new(net: FieldNet, prior: MercerPrior, data: Dataset, sigma: f64, flux: Option<FluxObservation>) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("noise sd must be positive, got {sigma}")));
        }
        if let Some(i) = data.t.iter().position(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Input(format!("measurement {i} lies outside y in [0, 1]")));
        }
        if let Some(f) = &flux {
            if !(f.sd > 0.0) {
                return Err(Error::Config("flux sd must be positive".into()));
            }
        }
        let softplus = net
            .architecture()
            .wrappers
            .last()
            .is_some_and(|w| matches!(w, crate::field_net::Wrapper::Softplus));
        if !softplus {
            return Err(Error::Config("conductivity network must end in a softplus link".into()));
        }
        Ok(InverseModel { fluct: net.fluctuation(), net, prior, data, sigma, flux, resolution: RESOLUTION, batch: None })
    }

    pub fn with_resolution(mut self, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Config("resolution must be at least 1".into()));
        }
        self.resolution = resolution;
        Ok(self)
    }

    /// Minibatch size for the temperature likelihood.
    pub fn with_batch(mut self, batch: Option<usize>) -> Self {
        self.batch = batch;
        self
    }

    pub fn net(&self) -> &FieldNet {
        &self.net
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    pub fn scaled(t: f64) -> f64 {
        (t - T_LO) / (T_HI - T_LO)
    }

    /// `kappa_theta` at temperatures `ts` (kelvin).
    pub fn kappa(&self, theta: &[f64], ts: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = ts.iter().map(|&t| Self::scaled(t)).collect();
        self.net.values(theta, &s)
    }

    pub fn profile(&self, theta: &[f64]) -> Result<KirchhoffProfile> {
        let pts = sample_points(T_LO, T_HI, self.resolution);
        KirchhoffProfile::from_samples(self.kappa(theta, &pts), T_LO, T_HI)
    }

    /// Solver temperatures at the measurement positions.
    pub fn predict(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let p = self.profile(theta)?;
        self.data.t.iter().map(|&y| p.temperature(y)).collect()
    }

    /// Likelihood of the temperatures in `batch` (rescaled by `n / |batch|`)
    /// and of the flux, with the gradient from differentiating the Kirchhoff
    /// quadrature.
    ///
    /// Implicit differentiation of `Theta(T_i) = y_i Theta(T_hi)` gives
    /// `dT_i = (y_i dTheta(T_hi) - dTheta(T_i)) / kappa(T_i)`, and every
    /// `dTheta(T) = int_{T_lo}^T dkappa` is assembled as one weighted
    /// vector-Jacobian product of the network.
    pub fn likelihood(&self, theta: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let profile = self.profile(theta)?;
        let n = profile.intervals();
        let h = profile.h;
        let scale = if batch.is_empty() { 0.0 } else { self.data.len() as f64 / batch.len() as f64 };

        let mut value = 0.0;
        // Coefficient of int_{T_lo}^{T_hi} dkappa.
        let mut total_coef = 0.0;
        // (T_i, coefficient of int_{T_lo}^{T_i} dkappa).
        let mut partial = Vec::with_capacity(batch.len());
        let temps: Vec<f64> = batch.iter().map(|&i| profile.temperature(self.data.t[i])).collect::<Result<_>>()?;
        let k_at = self.kappa(theta, &temps);
        for (k, &i) in batch.iter().enumerate() {
            let s = self.data.sd(i, self.sigma);
            let r = self.data.y[i] - temps[k];
            value -= scale * 0.5 * r * r / (s * s);
            // d value / d T_i
            let c = scale * r / (s * s);
            total_coef += c * self.data.t[i] / k_at[k];
            partial.push((temps[k], -c / k_at[k]));
        }
        if let Some(f) = &self.flux {
            let r = f.value - profile.total();
            value -= 0.5 * r * r / (f.sd * f.sd);
            total_coef += r / (f.sd * f.sd);
        }

        // Simpson weights over the whole range for the total integral, plus
        // cumulative pieces up to each T_i.
        let pts = sample_points(T_LO, T_HI, self.resolution);
        let mut cot = vec![0.0; pts.len()];
        let add_interval = |cot: &mut [f64], j: usize, w: f64| {
            cot[2 * j] += w * h / 6.0;
            cot[2 * j + 1] += w * 4.0 * h / 6.0;
            cot[2 * j + 2] += w * h / 6.0;
        };
        for j in 0..n {
            add_interval(&mut cot, j, total_coef);
        }
        let mut extra_pts = Vec::new();
        let mut extra_cot = Vec::new();
        for &(t, c) in &partial {
            let pos = ((t - T_LO) / h).clamp(0.0, n as f64);
            let j = (pos.floor() as usize).min(n.saturating_sub(1));
            for q in 0..j {
                add_interval(&mut cot, q, c);
            }
            let t0 = T_LO + h * j as f64;
            let len = t - t0;
            if len > 0.0 {
                extra_pts.extend([t0, t0 + 0.5 * len, t]);
                extra_cot.extend([c * len / 6.0, c * 4.0 * len / 6.0, c * len / 6.0]);
            }
        }
        let mut xs: Vec<f64> = pts.iter().chain(&extra_pts).map(|&t| Self::scaled(t)).collect();
        cot.extend(extra_cot);
        // Clamp rounding at the right end of the scaled domain.
        for x in xs.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        let grad = self.net.grad(theta, &xs, &cot);
        Ok((value, grad))
    }

    /// Mercer prior estimate plus likelihood. Streams: `child(0)` prior,
    /// `child(1)` minibatch.
    pub fn log_posterior(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.n_params() {
            return Err(Error::Config(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        let (draw, mut grad) = self.prior.estimate_with_grad(&self.fluct, theta, stream.child(0))?;
        let batch = super::regression::minibatch(self.data.len(), self.batch, stream.child(1));
        let (ll, gl) = self.likelihood(theta, &batch)?;
        for (a, b) in grad.iter_mut().zip(gl) {
            *a += b;
        }
        Ok((draw.value + ll, grad))
    }
}

impl LogDensityTerm for InverseModel {
    fn estimate(&self, theta: &[f64], stream: Stream) -> Result<(f64, Vec<f64>)> {
        self.log_posterior(theta, stream)
    }
}

/// Affine conductivity `a + b T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConductivity {
    pub a: f64,
    pub b: f64,
}

impl AffineConductivity {
    pub fn eval(&self, t: f64) -> f64 {
        self.a + self.b * t
    }

    /// Closed-form profile: `Theta(T) = a (T - T_lo) + b/2 (T^2 - T_lo^2)`.
    pub fn temperature(&self, y: f64) -> f64 {
        let total = self.theta(T_HI);
        let target = y * total;
        if self.b == 0.0 {
            return T_LO + target / self.a;
        }
        // b/2 T^2 + a T - (target + a T_lo + b/2 T_lo^2) = 0
        let c = target + self.a * T_LO + 0.5 * self.b * T_LO * T_LO;
        (-self.a + (self.a * self.a + 2.0 * self.b * c).sqrt()) / self.b
    }

    pub fn theta(&self, t: f64) -> f64 {
        self.a * (t - T_LO) + 0.5 * self.b * (t * t - T_LO * T_LO)
    }
}

/// `n` equispaced interior positions with noisy temperatures from an affine
/// conductivity, and a flux measurement with relative noise `flux_rel_sd`.
pub fn thermal_synthetic(
    kappa: AffineConductivity,
    n: usize,
    sigma: f64,
    flux_rel_sd: f64,
    seed: u64,
) -> (Dataset, FluxObservation) {
    let mut rng = Stream::new(seed).rng();
    let y: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    let t = y
        .iter()
        .map(|&p| kappa.temperature(p) + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let total = kappa.theta(T_HI);
    let sd = flux_rel_sd * total;
    let flux = FluxObservation { value: total + sd * rng.sample::<f64, _>(StandardNormal), sd };
    (Dataset { t: y, y: t, sigma: None }, flux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_net::{Architecture, MeanFunction, Wrapper};
    use crate::mercer::IndexDistribution;
    use crate::spectrum::Eigenbasis;

    #[test]
    fn constant_conductivity_is_linear() {
        let ys = [0.0, 0.25, 0.5, 0.9, 1.0];
        let t = kirchhoff_solve(|_| 3.7, &ys, T_LO, T_HI, 64).unwrap();
        for (y, t) in ys.iter().zip(&t) {
            assert!((t - (300.0 + 1600.0 * y)).abs() < 1e-10, "{y}: {t}");
        }
        assert_eq!(t[2], 1100.0);
    }

    #[test]
    fn linear_conductivity_has_square_root_profile() {
        let ys: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let t = kirchhoff_solve(|t| t, &ys, T_LO, T_HI, RESOLUTION).unwrap();
        for (y, t) in ys.iter().zip(&t) {
            let exact = (300.0f64.powi(2) + y * (1900.0f64.powi(2) - 300.0f64.powi(2))).sqrt();
            assert!((t - exact).abs() < 1e-8, "{y}: {t} vs {exact}");
        }
        assert!((t[10] - 1_850_000f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn boundary_values_are_exact() {
        let t = kirchhoff_solve(|t| 1.0 + (t / 200.0).sin().powi(2), &[0.0, 1.0], T_LO, T_HI, 17).unwrap();
        assert_eq!(t, vec![300.0, 1900.0]);
    }

    #[test]
    fn refinement_converges_at_second_order_or_better() {
        let kappa = |t: f64| 0.5 + 1e-3 * t + 0.3 * (t / 150.0).sin();
        let ys = [0.13, 0.37, 0.61, 0.88];
        let reference = kirchhoff_solve(kappa, &ys, T_LO, T_HI, 1 << 14).unwrap();
        let err = |n| {
            let t = kirchhoff_solve(kappa, &ys, T_LO, T_HI, n).unwrap();
            t.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(16), err(32), err(64));
        assert!(e2 <= e1 && e3 <= e2);
        assert!((e1 / e2).log2() >= 2.0 && (e2 / e3).log2() >= 2.0, "{e1} {e2} {e3}");
    }

    #[test]
    fn non_positive_conductivity_is_a_domain_error() {
        let err = kirchhoff_solve(|t| 1000.0 - t, &[0.5], T_LO, T_HI, 32).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn profile_is_monotone() {
        let ys: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let t = kirchhoff_solve(|t| 0.05 + (t / 80.0).sin().powi(2), &ys, T_LO, T_HI, 50).unwrap();
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn affine_closed_form_matches_solver() {
        let k = AffineConductivity { a: 5.0, b: 0.005 };
        let ys = [0.2, 0.5, 0.8];
        let t = kirchhoff_solve(|t| k.eval(t), &ys, T_LO, T_HI, RESOLUTION).unwrap();
        for (y, t) in ys.iter().zip(&t) {
            assert!((t - k.temperature(*y)).abs() < 1e-9);
        }
    }

    fn model(flux: bool) -> (InverseModel, Vec<f64>) {
        let arch = Architecture::single_layer(6)
            .with_wrapper(Wrapper::MeanShift { mean: MeanFunction::LearnedAffine })
            .with_wrapper(Wrapper::Softplus);
        let net = FieldNet::new(arch).unwrap();
        let mut theta = net.init_params(5).0;
        let k = net.n_params();
        theta[k - 2] = 6.0;
        theta[k - 1] = 8.0;
        let prior = MercerPrior::new(Eigenbasis::dirichlet_power(2.0, 6).unwrap(), 3, 16, 16, IndexDistribution::Uniform).unwrap();
        let (data, f) = thermal_synthetic(AffineConductivity { a: 5.0, b: 0.005 }, 20, 2.5, 0.01, 3);
        let m = InverseModel::new(net, prior, data, 2.5, flux.then_some(f)).unwrap().with_resolution(512).unwrap();
        (m, theta)
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        for flux in [false, true] {
            let (m, theta) = model(flux);
            let batch: Vec<usize> = (0..20).collect();
            let (_, g) = m.likelihood(&theta, &batch).unwrap();
            let h = 1e-6;
            for k in [0, 3, 7, 13, m.n_params() - 2, m.n_params() - 1] {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (m.likelihood(&a, &batch).unwrap().0 - m.likelihood(&b, &batch).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-3 * fd.abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn zero_data_posterior_is_prior() {
        let (m, theta) = model(false);
        let empty = InverseModel::new(m.net.clone(), m.prior.clone(), Dataset::new(vec![], vec![], None).unwrap(), 2.5, None).unwrap();
        let stream = Stream::new(4);
        let (_, g) = empty.log_posterior(&theta, stream).unwrap();
        let (_, gp) = m.prior.estimate_with_grad(&m.fluct, &theta, stream.child(0)).unwrap();
        assert_eq!(g, gp);
    }

    #[test]
    fn conductivity_is_positive() {
        let (m, mut theta) = model(false);
        let k = m.n_params();
        theta[k - 2] = -40.0;
        let ts: Vec<f64> = (0..50).map(|i| 300.0 + 32.0 * i as f64).collect();
        assert!(m.kappa(&theta, &ts).iter().all(|&v| v > 0.0));
    }
}
