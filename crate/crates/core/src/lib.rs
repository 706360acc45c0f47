//! Bayesian neural networks whose function-space distribution emulates a
//! Gaussian process, through a prior on the weights built from the Mercer
//! expansion of the target covariance kernel.
//!
//! The crate is organised around a few layers:
//!
//! - [`field_net`]: small dense networks `u_theta(x)` with exact gradients;
//! - [`spectrum`]: closed-form eigenpairs and truncated kernels;
//! - [`mercer`]: the unbiased stochastic estimator of `log p(theta)`;
//! - [`sgld`]: Langevin chains and MAP optimisation over composed targets;
//! - [`gp_oracle`] and [`stats`]: reference samplers and validation statistics;
//! - [`apps`]: regression, periodic prediction and a heat-equation inverse problem;
//! - [`hyper`]: hyperparameter score estimators;
//! - [`cost`]: analytic FLOP counts;
//! - [`config`], [`pipeline`] and [`io`]: experiment documents, runs and file formats.

pub mod apps;
pub mod config;
pub mod cost;
pub mod error;
pub mod exec;
pub mod field_net;
pub mod gp_oracle;
pub mod hyper;
pub mod io;
pub mod mercer;
pub mod pipeline;
pub mod rng;
pub mod sgld;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
pub use nalgebra;
pub use exec::Execution;
pub use rng::Stream;
