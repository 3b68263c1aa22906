//! Model domain types and the deterministic pieces of the covariance model
//! `Sigma(x) = Theta xi(x) xi(x)' Theta' + Sigma_0`.

mod moments;
mod prior;
mod simulate;
mod types;

pub use moments::{noise_moments, prior_cov_elements, prior_mean_covariance, KernelExponent};
pub use prior::{sample_prior, sample_prior_with_shrinkage, sample_shrinkage};
pub use simulate::{
    sample_dataset_from_trajectory, sample_gaussian, simulate_from_prior_dataset, simulate_spline_covariance, unit_grid,
    PriorDataset, SplineCovariance,
};
pub use types::{CovarianceTrajectory, Dataset, Hyperparameters, MeanMode, ModelState, ShrinkageState};

use nalgebra::{DMatrix, DVector};

use crate::error::{argument, Result};
use crate::linalg::chol_psd;

/// `Theta xi xi' Theta' + diag(sigma0)`.
///
/// Built as `G G'` with `G = Theta xi`, filling both triangles from the same
/// dot product so the result is exactly symmetric.
pub fn induced_covariance(theta: &DMatrix<f64>, xi_at_x: &DMatrix<f64>, sigma0: &DVector<f64>) -> DMatrix<f64> {
    let g = theta * xi_at_x;
    let p = g.nrows();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let v = g.row(i).dot(&g.row(j));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        out[(j, j)] += sigma0[j];
    }
    out
}

/// `mu(x) = Theta xi(x) psi(x)`.
pub fn induced_mean(theta: &DMatrix<f64>, xi_at_x: &DMatrix<f64>, psi_at_x: &DVector<f64>) -> DVector<f64> {
    theta * (xi_at_x * psi_at_x)
}

/// Exact decomposition of a PSD trajectory into model components.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub theta: DMatrix<f64>,
    pub xi: Vec<DMatrix<f64>>,
    pub sigma0: DVector<f64>,
}

/// Writes every `Sigma(x)` as `Theta xi(x) xi(x)' Theta'` with
/// `Theta = [I_p 0]` and the Cholesky factor of `Sigma(x)` in the upper-left
/// block of `xi(x)`; `Sigma_0 = 0`.
pub fn constructive_factorization(sigmas: &[DMatrix<f64>], l: usize, k: usize) -> Result<Factorization> {
    let p = sigmas.first().map_or(0, |s| s.nrows());
    if p == 0 {
        return Err(argument("empty trajectory"));
    }
    if l < p || k < p {
        return Err(argument(format!("need L >= p and k >= p (p = {p}, L = {l}, k = {k})")));
    }
    let mut theta = DMatrix::zeros(p, l);
    theta.view_mut((0, 0), (p, p)).fill_with_identity();
    let xi = sigmas
        .iter()
        .map(|s| {
            if s.nrows() != p || s.ncols() != p {
                return Err(argument("trajectory matrices differ in size"));
            }
            let chol = chol_psd(s)?;
            let mut block = DMatrix::zeros(l, k);
            block.view_mut((0, 0), (p, p)).copy_from(&chol.l);
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Factorization { theta, xi, sigma0: DVector::zeros(p) })
}
