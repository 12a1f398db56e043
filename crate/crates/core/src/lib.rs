//! Spatio-temporal resonator models on Laplacian eigenbases, with
//! square-root Kalman filtering, RTS smoothing and marginal-likelihood
//! parameter estimation.

pub mod basis;
pub mod covariance;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod model;
pub mod scenarios;
pub mod simulator;
pub mod special;
pub mod workflow;

pub use basis::{BasisSet, Domain, Point};
pub use covariance::Kernel;
pub use error::{Error, Result};
pub use inference::{GaussianBelief, ObservationBatch, ObservationStep};
pub use model::{Component, DiscreteSystem, FrequencySchedule, ModelSpec};
