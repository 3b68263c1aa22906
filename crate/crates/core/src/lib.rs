//! Bayesian nonparametric covariance regression.
//!
//! Responses `y_i ~ N(mu(x_i), Sigma(x_i))` with
//! `Sigma(x) = Theta xi(x) xi(x)' Theta' + Sigma_0`, where the entries of
//! `xi(.)` are Gaussian-process dictionary functions and `Theta` carries a
//! multiplicative gamma shrinkage prior.

pub mod baselines;
pub mod diagnostics;
pub mod distributions;
pub mod gibbs;
pub mod error;
pub mod gp_kernel;
pub mod linalg;
pub mod model;
pub mod spline;

pub use error::{CovRegError, Result};
pub use gp_kernel::{GramMatrix, KernelParams};
pub use model::{CovarianceTrajectory, Dataset, Hyperparameters, MeanMode, ModelState, ShrinkageState};
