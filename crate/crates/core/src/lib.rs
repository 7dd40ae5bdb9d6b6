//! Iterative model-error updating for Bayesian inverse problems.
//!
//! An expensive accurate forward model `F` is replaced by a cheap approximation `f`;
//! the discrepancy `M(u) = F(u) − f(u)` is modelled as a random variable whose law is
//! repeatedly re-estimated by pushing the current posterior through `M`.
//!
//! - [`gaussian`]: exact mean/covariance iteration for linear models.
//! - [`particles`]: ensemble versions for nonlinear models.
//! - [`models`]: the Poisson source and Darcy permeability problems and their priors.
//! - [`errormodels`]: conventional, enhanced and iterative inference drivers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod errormodels;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod models;
pub mod particles;

pub use error::{Error, Result};
pub use gaussian::{GaussianMeasure, IterationTrace, LinearModelPair};
pub use models::{ForwardModelPair, LinearPair};
pub use particles::{ModelErrorSample, ParticleEnsemble, RngSpec};
