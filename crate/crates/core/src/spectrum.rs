//! Closed-form eigenpairs of target covariance operators, truncated Mercer
//! kernels and energy diagnostics.
//!
//! Indices are 1-based throughout. For the periodic family index 1 is the
//! constant function, index `2k` the cosine of harmonic `k` and `2k + 1` its
//! sine, so a family with `n_max` harmonics has `2 n_max + 1` members.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this are excluded from the prior.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Number of terms used for eigenvalue totals without a closed form.
pub const TOTAL_TERMS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisFamily {
    /// Wiener measure, `k(s, t) = min(s, t)` on `[0, L]` shifted to the domain start.
    BrownianMotion,
    /// Powers of the inverse Dirichlet Laplacian; `alpha = 1` is the Brownian bridge.
    DirichletLaplacianPower { alpha: f64 },
    /// Trigonometric system orthonormal on one period, extended periodically.
    PeriodicFourier {
        period: f64,
        n_max: usize,
        decay_rate: f64,
    },
}

/// Serializable description of a built-in basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub truncation: usize,
    /// Defaults to `[0, 1]`, or `[0, period]` for the periodic family.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    /// Multiplies every eigenvalue.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Hyperparameters with analytic eigenvalue derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameter {
    /// The exponent `alpha` of the Dirichlet power family.
    DampingExponent,
    /// The eigenvalue multiplier `scale`.
    VarianceScale,
}

type EigenFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// User-provided eigenpairs.
#[derive(Clone)]
pub struct CustomBasis {
    pub eigenvalues: Vec<f64>,
    pub functions: EigenFn,
}

impl fmt::Debug for CustomBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBasis")
            .field("eigenvalues", &self.eigenvalues)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
enum Family {
    Builtin(BasisFamily),
    Custom(CustomBasis),
}

/// A truncated eigenbasis `{(lambda_n, phi_n)}_{n <= K}` on an interval.
#[derive(Clone, Debug)]
pub struct Eigenbasis {
    family: Family,
    truncation: usize,
    domain: (f64, f64),
    scale: f64,
    active: Vec<usize>,
}

impl Eigenbasis {
    pub fn brownian_motion(truncation: usize) -> Self {
        Self::from_spec(&BasisSpec {
            family: BasisFamily::BrownianMotion,
            truncation,
            domain: None,
            scale: 1.0,
        })
        .expect("valid Brownian motion basis")
    }

    pub fn dirichlet_power(alpha: f64, truncation: usize) -> Result<Self> {
        Self::from_spec(&BasisSpec {
            family: BasisFamily::DirichletLaplacianPower { alpha },
            truncation,
            domain: None,
            scale: 1.0,
        })
    }

    /// `min(s, t) - s t` on `[0, 1]`.
    pub fn brownian_bridge(truncation: usize) -> Self {
        Self::dirichlet_power(1.0, truncation).expect("valid bridge basis")
    }

    /// All `2 n_max + 1` members of the periodic system.
    pub fn periodic(period: f64, n_max: usize, decay_rate: f64) -> Result<Self> {
        Self::from_spec(&BasisSpec {
            family: BasisFamily::PeriodicFourier {
                period,
                n_max,
                decay_rate,
            },
            truncation: 2 * n_max + 1,
            domain: None,
            scale: 1.0,
        })
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        if !(spec.scale > 0.0 && spec.scale.is_finite()) {
            return Err(Error::Config(format!("basis scale must be positive, got {}", spec.scale)));
        }
        let default_domain = match &spec.family {
            BasisFamily::BrownianMotion => (0.0, 1.0),
            BasisFamily::DirichletLaplacianPower { alpha } => {
                if !(*alpha > 0.5 && alpha.is_finite()) {
                    return Err(Error::Config(format!(
                        "damping exponent must exceed 1/2, got {alpha}"
                    )));
                }
                (0.0, 1.0)
            }
            BasisFamily::PeriodicFourier {
                period,
                n_max,
                decay_rate,
            } => {
                if !(*period > 0.0 && period.is_finite()) || !(*decay_rate >= 0.0) {
                    return Err(Error::Config("periodic basis needs period > 0 and decay_rate >= 0".into()));
                }
                if spec.truncation > 2 * n_max + 1 {
                    return Err(Error::Config(format!(
                        "periodic basis with n_max {n_max} has {} members, truncation {} requested",
                        2 * n_max + 1,
                        spec.truncation
                    )));
                }
                (0.0, *period)
            }
        };
        let domain = spec.domain.map_or(default_domain, |[a, b]| (a, b));
        if !(domain.1 > domain.0) {
            return Err(Error::Config(format!("empty domain [{}, {}]", domain.0, domain.1)));
        }
        if let BasisFamily::PeriodicFourier { period, .. } = &spec.family {
            if ((domain.1 - domain.0) - period).abs() > 1e-12 * period {
                return Err(Error::Config("periodic basis domain must span exactly one period".into()));
            }
        }
        let mut basis = Eigenbasis {
            family: Family::Builtin(spec.family.clone()),
            truncation: spec.truncation,
            domain,
            scale: spec.scale,
            active: Vec::new(),
        };
        basis.refresh_active();
        Ok(basis)
    }

    /// Custom eigenpairs; `functions(n, x)` evaluates `phi_n(x)` for `n >= 1`.
    /// Orthonormality is checked on a `10^4`-point grid unless `validate` is false.
    pub fn custom(
        eigenvalues: Vec<f64>,
        domain: (f64, f64),
        functions: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        validate: bool,
    ) -> Result<Self> {
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("custom eigenvalues must be positive and finite".into()));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("custom eigenvalues must be non-increasing".into()));
        }
        if !(domain.1 > domain.0) {
            return Err(Error::Config("custom basis needs a non-empty domain".into()));
        }
        let truncation = eigenvalues.len();
        let mut basis = Eigenbasis {
            family: Family::Custom(CustomBasis {
                eigenvalues,
                functions: Arc::new(functions),
            }),
            truncation,
            domain,
            scale: 1.0,
            active: Vec::new(),
        };
        if validate && truncation > 0 {
            let defect = basis.orthonormality_defect(truncation, 10_000)?;
            if defect > 1e-4 {
                return Err(Error::Config(format!(
                    "custom eigenfunctions are not orthonormal (defect {defect:.3e})"
                )));
            }
        }
        basis.refresh_active();
        Ok(basis)
    }

    fn refresh_active(&mut self) {
        self.active = (1..=self.truncation)
            .filter(|&n| self.lambda(n) >= EIGEN_FLOOR)
            .collect();
        let excluded = self.truncation - self.active.len();
        if excluded > 0 {
            log::warn!(
                "{excluded} of {} eigenvalues fall below {EIGEN_FLOOR:e} and are excluded",
                self.truncation
            );
        }
    }

    /// Serializable description; `None` for custom bases.
    pub fn spec(&self) -> Option<BasisSpec> {
        match &self.family {
            Family::Builtin(f) => Some(BasisSpec {
                family: f.clone(),
                truncation: self.truncation,
                domain: Some([self.domain.0, self.domain.1]),
                scale: self.scale,
            }),
            Family::Custom(_) => None,
        }
    }

    pub fn family(&self) -> Option<&BasisFamily> {
        match &self.family {
            Family::Builtin(f) => Some(f),
            Family::Custom(_) => None,
        }
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Copy with a different truncation.
    pub fn with_truncation(&self, truncation: usize) -> Result<Self> {
        if let Family::Builtin(BasisFamily::PeriodicFourier { n_max, .. }) = &self.family {
            if truncation > 2 * n_max + 1 {
                return Err(Error::Config("truncation exceeds periodic family size".into()));
            }
        }
        if let Family::Custom(c) = &self.family {
            if truncation > c.eigenvalues.len() {
                return Err(Error::Config("truncation exceeds custom family size".into()));
            }
        }
        let mut b = self.clone();
        b.truncation = truncation;
        b.refresh_active();
        Ok(b)
    }

    /// Copy with a different eigenvalue multiplier.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("basis scale must be positive, got {scale}")));
        }
        let mut b = self.clone();
        b.scale = scale;
        b.refresh_active();
        Ok(b)
    }

    /// Copy of a Dirichlet power basis with a different exponent.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        match &self.family {
            Family::Builtin(BasisFamily::DirichletLaplacianPower { .. }) => {
                let mut spec = self.spec().expect("builtin");
                spec.family = BasisFamily::DirichletLaplacianPower { alpha };
                Self::from_spec(&spec)
            }
            _ => Err(Error::UnsupportedHyperparameter(
                "damping exponent is defined only for the Dirichlet power family".into(),
            )),
        }
    }

    /// Indices `n <= K` whose eigenvalue is at or above [`EIGEN_FLOOR`].
    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    fn check_index(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.truncation {
            return Err(Error::Index {
                index: n,
                max: self.truncation,
            });
        }
        Ok(())
    }

    pub fn eigenvalue(&self, n: usize) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.lambda(n))
    }

    pub fn eigenfunction(&self, n: usize, x: f64) -> Result<f64> {
        self.check_index(n)?;
        Ok(self.phi(n, x))
    }

    /// `lambda_n` by formula, without the truncation check.
    pub fn lambda(&self, n: usize) -> f64 {
        let l = self.length();
        let nf = n as f64;
        self.scale
            * match &self.family {
                Family::Builtin(BasisFamily::BrownianMotion) => {
                    let w = (nf - 0.5) * PI / l;
                    1.0 / (w * w)
                }
                Family::Builtin(BasisFamily::DirichletLaplacianPower { alpha }) => {
                    (nf * PI / l).powf(-2.0 * alpha)
                }
                Family::Builtin(BasisFamily::PeriodicFourier { period, decay_rate, .. }) => {
                    if n == 1 {
                        1.0
                    } else {
                        let k = (n / 2) as f64;
                        let w = k * PI / period;
                        (-decay_rate * w * w).exp()
                    }
                }
                Family::Custom(c) => c.eigenvalues[n - 1],
            }
    }

    /// `phi_n(x)` by formula, without the truncation check.
    pub fn phi(&self, n: usize, x: f64) -> f64 {
        let (a, _) = self.domain;
        let l = self.length();
        match &self.family {
            Family::Builtin(BasisFamily::BrownianMotion) => {
                (2.0 / l).sqrt() * ((n as f64 - 0.5) * PI * (x - a) / l).sin()
            }
            Family::Builtin(BasisFamily::DirichletLaplacianPower { .. }) => {
                (2.0 / l).sqrt() * (n as f64 * PI * (x - a) / l).sin()
            }
            Family::Builtin(BasisFamily::PeriodicFourier { period, .. }) => {
                if n == 1 {
                    return 1.0 / period.sqrt();
                }
                let k = (n / 2) as f64;
                let s = (x - a).rem_euclid(*period);
                let arg = std::f64::consts::TAU * k * s / period;
                let amp = (2.0 / period).sqrt();
                if n % 2 == 0 {
                    amp * arg.cos()
                } else {
                    amp * arg.sin()
                }
            }
            Family::Custom(c) => (c.functions)(n, x),
        }
    }

    /// `d lambda_n / d h` for hyperparameter `h`.
    pub fn eigenvalue_derivative(&self, n: usize, h: Hyperparameter) -> Result<f64> {
        self.check_index(n)?;
        match (h, &self.family) {
            (Hyperparameter::VarianceScale, Family::Builtin(_)) => Ok(self.lambda(n) / self.scale),
            (Hyperparameter::DampingExponent, Family::Builtin(BasisFamily::DirichletLaplacianPower { .. })) => {
                let w = n as f64 * PI / self.length();
                Ok(-2.0 * w.ln() * self.lambda(n))
            }
            (h, _) => Err(Error::UnsupportedHyperparameter(format!(
                "{h:?} has no analytic eigenvalue derivative for this basis"
            ))),
        }
    }

    /// `sum_{n in active} lambda_n phi_n(s) phi_n(t)`.
    pub fn truncated_kernel(&self, s: f64, t: f64) -> f64 {
        self.active
            .iter()
            .map(|&n| self.lambda(n) * (self.phi(n, s) * self.phi(n, t)))
            .sum()
    }

    /// `K x m` matrix of `phi_n(grid_j)` over the active indices.
    pub fn design(&self, grid: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.active.len(), grid.len(), |r, c| {
            self.phi(self.active[r], grid[c])
        })
    }

    /// Truncated kernel evaluated on `grid x grid`, exactly symmetric.
    pub fn kernel_matrix(&self, grid: &[f64]) -> DMatrix<f64> {
        let phi = self.design(grid);
        let m = grid.len();
        let lambdas: Vec<f64> = self.active.iter().map(|&n| self.lambda(n)).collect();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for (r, l) in lambdas.iter().enumerate() {
                    acc += l * phi[(r, i)] * phi[(r, j)];
                }
                k[(i, j)] = acc;
                k[(j, i)] = acc;
            }
        }
        k
    }

    /// Total eigenvalue mass of the full (untruncated) family.
    pub fn total_energy(&self) -> f64 {
        let l = self.length();
        match &self.family {
            Family::Builtin(BasisFamily::BrownianMotion) => self.scale * l * l / 2.0,
            Family::Builtin(BasisFamily::DirichletLaplacianPower { alpha }) if *alpha == 1.0 => {
                self.scale * l * l / 6.0
            }
            Family::Builtin(BasisFamily::DirichletLaplacianPower { alpha }) => {
                let p = 2.0 * alpha;
                let head: f64 = (1..=TOTAL_TERMS).rev().map(|n| self.lambda(n)).sum();
                // Tail bounded by the integral from N to infinity.
                let w = PI / l;
                let tail = self.scale * w.powf(-p) * (TOTAL_TERMS as f64 + 0.5).powf(1.0 - p) / (p - 1.0);
                head + tail
            }
            Family::Builtin(BasisFamily::PeriodicFourier { n_max, .. }) => {
                (1..=2 * n_max + 1).map(|n| self.lambda(n)).sum()
            }
            Family::Custom(c) => c.eigenvalues.iter().sum(),
        }
    }

    /// Fraction of the total eigenvalue mass captured by the first `k` terms.
    pub fn energy_ratio(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Config("energy ratio needs K >= 1".into()));
        }
        let k = match &self.family {
            Family::Builtin(BasisFamily::PeriodicFourier { n_max, .. }) => k.min(2 * n_max + 1),
            Family::Custom(c) => k.min(c.eigenvalues.len()),
            _ => k,
        };
        let head: f64 = (1..=k).rev().map(|n| self.lambda(n)).sum();
        Ok((head / self.total_energy()).min(1.0))
    }

    /// `max_{m,n <= n_max} |int phi_m phi_n - delta_mn|` by the trapezoid rule
    /// on `points` equispaced nodes of the basis domain.
    pub fn orthonormality_defect(&self, n_max: usize, points: usize) -> Result<f64> {
        if points < 2 {
            return Err(Error::Config("quadrature needs at least 2 points".into()));
        }
        let family_size = match &self.family {
            Family::Builtin(BasisFamily::PeriodicFourier { n_max, .. }) => Some(2 * n_max + 1),
            Family::Custom(c) => Some(c.eigenvalues.len()),
            _ => None,
        };
        if let Some(size) = family_size {
            if n_max > size {
                return Err(Error::Index { index: n_max, max: size });
            }
        }
        let (a, b) = self.domain;
        let grid = uniform_grid(a, b, points);
        let w = trapezoid_weights(a, b, points);
        let vals: Vec<Vec<f64>> = (1..=n_max)
            .map(|n| grid.iter().map(|&x| self.phi(n, x)).collect())
            .collect();
        let mut worst = 0.0f64;
        for m in 0..n_max {
            for n in m..n_max {
                let ip: f64 = (0..points).map(|j| w[j] * vals[m][j] * vals[n][j]).sum();
                let target = if m == n { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        Ok(worst)
    }
}

/// `points` equispaced nodes from `a` to `b` inclusive.
pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (points - 1) as f64;
            (0..points)
                .map(|j| if j == points - 1 { b } else { a + h * j as f64 })
                .collect()
        }
    }
}

/// Composite trapezoid weights for [`uniform_grid`].
pub fn trapezoid_weights(a: f64, b: f64, points: usize) -> Vec<f64> {
    let h = (b - a) / (points - 1) as f64;
    let mut w = vec![h; points];
    w[0] = h / 2.0;
    w[points - 1] = h / 2.0;
    w
}
