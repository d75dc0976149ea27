//! Bayesian uncertainty quantification for models whose inputs and outputs
//! are both observed with noise: third-order jet autodiff, MLP and DeepONet
//! networks, Hamiltonian Monte Carlo, errors-in-variables log-posteriors, and
//! the reaction-diffusion data generators used to pretrain operators.

pub mod error;
pub mod jet;
pub mod linalg;
pub mod models;
pub mod nets;
pub mod physics;
pub mod sampler;

pub use error::{Error, Result};
