//! Starting states for the sampler.

use nalgebra::DMatrix;
use rand::Rng;

use super::gp_posterior::GpConditional;
use super::kappa::{default_bin_halfwidth, local_covariance, LocalCovariance};
use super::steps::{eta_conditional, step_sigma0, step_theta, step_xi, ObservedData};
use crate::error::{CovRegError, Result};
use crate::linalg::{pseudo_inverse, sample_canonical};
use crate::model::{sample_prior, Dataset, Hyperparameters, MeanMode, ModelState};

/// Settings of [`data_driven_init`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataDrivenInit {
    pub n_knots: usize,
    /// Defaults to the smallest integer above `p / 2`.
    pub bin_halfwidth: Option<usize>,
    pub warmup_cycles: usize,
}

impl Default for DataDrivenInit {
    fn default() -> Self {
        Self { n_knots: 20, bin_halfwidth: None, warmup_cycles: 3 }
    }
}

/// Target loadings `Lambda(x_i)`: the first `k*` columns of the smoothed
/// local Cholesky factor (zero-padded when `k* > p`).
fn target_loadings(local: &LocalCovariance, xs: &[f64], k: usize) -> Vec<DMatrix<f64>> {
    xs.iter()
        .map(|&x| {
            let c = local.factor_at(x);
            let p = c.nrows();
            let mut lam = DMatrix::zeros(p, k);
            let cols = k.min(p);
            lam.columns_mut(0, cols).copy_from(&c.columns(0, cols));
            lam
        })
        .collect()
}

/// `xi(x_i) = Theta^+ Lambda(x_i)`. The targets are splines through knot
/// values, so this equals splining `Theta^+ Lambda` through the knots.
fn project_dictionary(state: &mut ModelState, targets: &[DMatrix<f64>]) {
    let pinv = pseudo_inverse(&state.theta);
    for (xi, lam) in state.xi.iter_mut().zip(targets) {
        *xi = &pinv * lam;
    }
}

/// Data-driven starting state.
///
/// `Theta`, `Sigma_0` and the shrinkage variables come from the prior. The
/// loadings `Theta xi(x_i)` start at a rank-`k*` truncation of the smoothed
/// local Cholesky factors, `eta_i` is drawn from its conditional given
/// those loadings, and `xi` is the pseudo-inverse projection. A few warm-up
/// cycles then redraw `xi`, `Theta` and `Sigma_0` and re-project `xi` onto
/// the new `Theta`.
pub fn data_driven_init<R: Rng + ?Sized>(
    data: &Dataset,
    hyper: &Hyperparameters,
    mode: MeanMode,
    gp: &GpConditional,
    cfg: &DataDrivenInit,
    rng: &mut R,
) -> Result<ModelState> {
    let xs = data
        .scalar_predictors()
        .ok_or_else(|| CovRegError::Unsupported("data-driven initialization needs a scalar predictor".into()))?;
    let (n, p) = (data.n(), data.p());
    let half = cfg.bin_halfwidth.unwrap_or_else(|| default_bin_halfwidth(p));
    let local = local_covariance(data, cfg.n_knots.min(n), half)?;
    let targets = target_loadings(&local, &xs, hyper.k_star);

    let mut state = sample_prior(hyper, &data.xs, p, mode, rng)?;
    let observed = ObservedData::new(data);
    project_dictionary(&mut state, &targets);
    for i in 0..n {
        let (q, b) = eta_conditional(&state, &observed, i)?;
        let draw = sample_canonical(&q, &b, rng)?.0;
        state.eta.set_column(i, &draw);
    }
    state.psi.fill(0.0);
    state.nu.copy_from(&state.eta);

    for _ in 0..cfg.warmup_cycles {
        step_xi(&mut state, &observed, gp, rng)?;
        step_theta(&mut state, &observed, rng)?;
        step_sigma0(&mut state, &observed, hyper, rng)?;
        project_dictionary(&mut state, &targets);
    }
    state.validate()?;
    Ok(state)
}
