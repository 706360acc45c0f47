//! Application pipelines: heteroscedastic regression, periodic extrapolation
//! and the conductivity inverse problem.

pub mod data;
pub mod heat;
pub mod periodic;
pub mod regression;
pub mod summary;

pub use data::{Dataset, Scaling};
pub use heat::{kirchhoff_solve, AffineConductivity, FluxObservation, InverseModel, KirchhoffProfile};
pub use periodic::{periodic_architecture, periodic_predict, PeriodicModel, PeriodicPrediction};
pub use regression::{gaussian_loglik, minibatch, GaussianLikelihood, HeteroModel};
pub use summary::{predictive_summary, PredictiveSummary};
