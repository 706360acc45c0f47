//! Reference Gaussian-process samplers: exact draws from a dense factorization
//! of the kernel matrix, and truncated Karhunen–Loève draws.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{gemm, Execution, CHUNK};
use crate::rng::Stream;
use crate::spectrum::{BasisSpec, Eigenbasis};

/// Jitter values tried, in order, when the kernel matrix is not numerically
/// positive semidefinite.
pub const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Closed-form covariance functions.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// `min(s, t)`.
    BrownianMotion,
    /// `min(s, t) - s t`.
    BrownianBridge,
    /// `sum_{n <= K} lambda_n phi_n(s) phi_n(t)`.
    Truncated(Eigenbasis),
    Zero,
}

/// Serializable description of a [`Kernel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    BrownianMotion,
    BrownianBridge,
    Truncated { basis: BasisSpec },
    Zero,
}

impl Kernel {
    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        Ok(match spec {
            KernelSpec::BrownianMotion => Kernel::BrownianMotion,
            KernelSpec::BrownianBridge => Kernel::BrownianBridge,
            KernelSpec::Truncated { basis } => Kernel::Truncated(Eigenbasis::from_spec(basis)?),
            KernelSpec::Zero => Kernel::Zero,
        })
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            Kernel::BrownianMotion => s.min(t),
            Kernel::BrownianBridge => s.min(t) - s * t,
            Kernel::Truncated(basis) => basis.truncated_kernel(s, t),
            Kernel::Zero => 0.0,
        }
    }

    /// Kernel matrix on `grid`, exactly symmetric.
    pub fn matrix(&self, grid: &[f64]) -> DMatrix<f64> {
        if let Kernel::Truncated(basis) = self {
            return basis.kernel_matrix(grid);
        }
        let m = grid.len();
        let mut k = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = self.eval(grid[i], grid[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Cholesky factorization that accepts positive semidefinite input.
///
/// Pivots within `tol` of zero produce a zero column instead of failing, so
/// rank-deficient kernels such as the zero kernel or `min(s,t)` with `s = 0` on
/// the grid factor without jitter. Returns `None` when a pivot is clearly
/// negative.
fn semidefinite_cholesky(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Exact sampler for the Gaussian vector `N(0, K_grid + jitter I)`.
#[derive(Clone, Debug)]
pub struct ExactSampler {
    grid: Vec<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl ExactSampler {
    /// Factorizes the kernel matrix, escalating the jitter along
    /// [`JITTER_LADDER`] when `jitter` alone does not suffice.
    pub fn new(kernel: &Kernel, grid: &[f64], jitter: f64) -> Result<Self> {
        Self::from_matrix(kernel.matrix(grid), grid, jitter)
    }

    /// Same as [`ExactSampler::new`] for a precomputed symmetric kernel matrix.
    pub fn from_matrix(k: DMatrix<f64>, grid: &[f64], jitter: f64) -> Result<Self> {
        if k.nrows() != grid.len() || k.ncols() != grid.len() {
            return Err(Error::Input(format!(
                "kernel matrix is {}x{} for {} grid points",
                k.nrows(),
                k.ncols(),
                grid.len()
            )));
        }
        if grid.is_empty() {
            return Err(Error::Input("grid must be nonempty".into()));
        }
        if !(jitter >= 0.0) {
            return Err(Error::Input(format!("jitter must be >= 0, got {jitter}")));
        }
        let scale = k.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        let tol = 1e-13 * scale * grid.len() as f64;
        let ladder = std::iter::once(jitter).chain(JITTER_LADDER.iter().copied().filter(|&j| j > jitter));
        for j in ladder {
            let mut kj = k.clone();
            for i in 0..grid.len() {
                kj[(i, i)] += j;
            }
            if let Some(factor) = semidefinite_cholesky(&kj, tol) {
                if j > jitter {
                    log::warn!("kernel matrix factorized with escalated jitter {j:e}");
                }
                return Ok(ExactSampler { grid: grid.to_vec(), factor, jitter: j });
            }
        }
        let smallest = k.symmetric_eigenvalues().min();
        Err(Error::Numerical(format!(
            "kernel matrix not positive semidefinite after jitter {:e}; smallest eigenvalue {smallest:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn sample(&self, stream: Stream) -> Vec<f64> {
        let m = self.grid.len();
        let mut rng = stream.rng();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        (0..m)
            .map(|i| (0..=i).map(|k| self.factor[(i, k)] * z[k]).sum())
            .collect()
    }

    /// `count` draws; draw `i` uses `stream.child(i)`.
    pub fn sample_many(&self, count: usize, stream: Stream, exec: Execution) -> Vec<Vec<f64>> {
        exec.map_range(count, |i| self.sample(stream.child(i as u64)))
    }
}

/// One exact draw; see [`ExactSampler`] to amortize the factorization.
pub fn gp_sample_exact(kernel: &Kernel, grid: &[f64], stream: Stream, jitter: f64) -> Result<Vec<f64>> {
    Ok(ExactSampler::new(kernel, grid, jitter)?.sample(stream))
}

/// Truncated Karhunen–Loève sampler `sum_n sqrt(lambda_n) xi_n phi_n(grid)`.
#[derive(Clone, Debug)]
pub struct KleSampler {
    grid: Vec<f64>,
    /// `m x K`, entry `(i, n) = sqrt(lambda_n) phi_n(x_i)`.
    loadings: DMatrix<f64>,
}

impl KleSampler {
    pub fn new(basis: &Eigenbasis, grid: &[f64]) -> Self {
        let active = basis.active_indices();
        let mut loadings = DMatrix::zeros(grid.len(), active.len());
        for (c, &n) in active.iter().enumerate() {
            let s = basis.lambda(n).sqrt();
            for (i, &x) in grid.iter().enumerate() {
                loadings[(i, c)] = s * basis.phi(n, x);
            }
        }
        KleSampler { grid: grid.to_vec(), loadings }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_terms(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn sample(&self, stream: Stream) -> Vec<f64> {
        self.sample_block(&[stream]).pop().unwrap_or_default()
    }

    /// `count` draws; draw `i` uses `stream.child(i)`.
    pub fn sample_many(&self, count: usize, stream: Stream, exec: Execution) -> Vec<Vec<f64>> {
        let parts = exec.map_chunks(count, CHUNK, |range| {
            let streams: Vec<Stream> = range.map(|i| stream.child(i as u64)).collect();
            self.sample_block(&streams)
        });
        parts.into_iter().flatten().collect()
    }

    fn sample_block(&self, streams: &[Stream]) -> Vec<Vec<f64>> {
        let (m, k) = self.loadings.shape();
        let n = streams.len();
        let mut xi = Vec::with_capacity(n * k);
        for s in streams {
            let mut rng = s.rng();
            xi.extend((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        let mut out = vec![0.0; n * m];
        // out (n x m) = xi (n x K) * loadings^T; loadings is column-major.
        gemm(n, k, m, &xi, k, 1, self.loadings.as_slice(), m, 1, 0.0, &mut out, m);
        if m == 0 {
            return vec![Vec::new(); n];
        }
        out.chunks_exact(m).map(|c| c.to_vec()).collect()
    }
}

pub fn kle_sample(basis: &Eigenbasis, grid: &[f64], stream: Stream) -> Vec<f64> {
    KleSampler::new(basis, grid).sample(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::uniform_grid;

    fn covariance(draws: &[Vec<f64>]) -> DMatrix<f64> {
        let n = draws.len() as f64;
        let m = draws[0].len();
        let mut mean = vec![0.0; m];
        for d in draws {
            for (a, b) in mean.iter_mut().zip(d) {
                *a += b / n;
            }
        }
        let mut q = DMatrix::zeros(m, m);
        for d in draws {
            for i in 0..m {
                for j in 0..m {
                    q[(i, j)] += (d[i] - mean[i]) * (d[j] - mean[j]);
                }
            }
        }
        q / (n - 1.0)
    }

    #[test]
    fn unit_point_variance() {
        let s = ExactSampler::new(&Kernel::BrownianMotion, &[1.0], 0.0).unwrap();
        let draws = s.sample_many(100_000, Stream::new(1), Execution::default());
        let var = draws.iter().map(|d| d[0] * d[0]).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn zero_kernel_gives_zero_path() {
        let grid = uniform_grid(0.0, 1.0, 20);
        let path = gp_sample_exact(&Kernel::Zero, &grid, Stream::new(2), 0.0).unwrap();
        assert!(path.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_covariance_converges() {
        let grid = uniform_grid(0.02, 1.0, 50);
        let s = ExactSampler::new(&Kernel::BrownianMotion, &grid, 0.0).unwrap();
        let q = covariance(&s.sample_many(10_000, Stream::new(3), Execution::default()));
        let err = (q - Kernel::BrownianMotion.matrix(&grid)).abs().max();
        assert!(err <= 0.05, "{err}");
    }

    #[test]
    fn grid_including_origin_factors() {
        let grid = uniform_grid(0.0, 1.0, 64);
        let s = ExactSampler::new(&Kernel::BrownianMotion, &grid, 0.0).unwrap();
        assert_eq!(s.jitter(), 0.0);
        assert_eq!(s.sample(Stream::new(4))[0], 0.0);
    }

    #[test]
    fn indefinite_matrix_reports_smallest_eigenvalue() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = ExactSampler::from_matrix(k, &[0.5, 0.7], 0.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("smallest eigenvalue"), "{msg}");
    }

    #[test]
    fn single_term_kle_variance() {
        let basis = Eigenbasis::brownian_motion(1);
        let grid = [0.3, 1.0];
        let s = KleSampler::new(&basis, &grid);
        let draws = s.sample_many(50_000, Stream::new(5), Execution::default());
        for (i, &x) in grid.iter().enumerate() {
            // Each draw is a multiple of phi_1.
            let ratio = draws[7][i] / basis.phi(1, x);
            assert!((ratio - draws[7][1] / basis.phi(1, 1.0)).abs() < 1e-12);
            let var = draws.iter().map(|d| d[i] * d[i]).sum::<f64>() / draws.len() as f64;
            let expected = basis.lambda(1) * basis.phi(1, x).powi(2);
            assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
        }
    }

    #[test]
    fn kle_matches_truncated_kernel() {
        let basis = Eigenbasis::brownian_motion(100);
        let grid = uniform_grid(0.0, 1.0, 50);
        let q = covariance(&KleSampler::new(&basis, &grid).sample_many(10_000, Stream::new(6), Execution::default()));
        let err = (q - basis.kernel_matrix(&grid)).abs().max();
        assert!(err <= 0.05, "{err}");
    }

    #[test]
    fn dirichlet_draws_vanish_at_origin() {
        let basis = Eigenbasis::dirichlet_power(1.0, 30).unwrap();
        let s = KleSampler::new(&basis, &[0.0, 0.5]);
        for i in 0..20 {
            assert_eq!(s.sample(Stream::new(7).child(i))[0], 0.0);
        }
    }

    #[test]
    fn exact_and_kle_agree_for_brownian_motion() {
        let grid = uniform_grid(0.02, 1.0, 50);
        let draws = 100_000;
        let exact = ExactSampler::new(&Kernel::BrownianMotion, &grid, 0.0).unwrap();
        let kle = KleSampler::new(&Eigenbasis::brownian_motion(10_000), &grid);
        let qa = covariance(&exact.sample_many(draws, Stream::new(8), Execution::default()));
        let qb = covariance(&kle.sample_many(draws, Stream::new(9), Execution::default()));
        let gap = (qa - qb).abs().max();
        assert!(gap <= 0.02, "{gap}");
    }

    #[test]
    fn kernel_spec_roundtrip() {
        let spec: KernelSpec = serde_json::from_str(r#"{"kind":"brownian_bridge"}"#).unwrap();
        assert_eq!(spec, KernelSpec::BrownianBridge);
        let typo = r#"{"kind":"truncated","basis":{"family":{"kind":"brownian_motion"},"truncation":5},"extra":1}"#;
        assert!(serde_json::from_str::<KernelSpec>(typo).is_err());
        let k = Kernel::from_spec(&spec).unwrap();
        assert!((k.eval(0.25, 0.5) - 0.125).abs() < 1e-15);
    }
}
