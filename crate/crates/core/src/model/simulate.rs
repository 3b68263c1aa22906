//! Synthetic data generators: draws from the model prior and the
//! spline-knot parametric covariance generator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::prior::sample_prior;
use super::types::{CovarianceTrajectory, Dataset, Hyperparameters, MeanMode, ModelState};
use crate::distributions::{sample_positive_truncated_normal, sample_standard_normal};
use crate::error::{argument, Result};
use crate::linalg::{chol_psd, sample_with_factor};
use crate::spline::NaturalCubicSpline;

/// Scalar predictors `1/n, 2/n, .., 1`: the index set `1..n` mapped to `(0, 1]`.
pub fn unit_grid(n: usize) -> Vec<Vec<f64>> {
    (1..=n).map(|i| vec![i as f64 / n as f64]).collect()
}

/// One draw from `N(mu, sigma)`.
pub fn sample_gaussian<R: Rng + ?Sized>(mu: &DVector<f64>, sigma: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if mu.len() != sigma.nrows() {
        return Err(argument("mean and covariance dimensions differ"));
    }
    Ok(sample_with_factor(mu, &chol_psd(sigma)?, rng))
}

/// Draws `y_i ~ N(mu(x_i), Sigma(x_i))` independently for every grid point.
pub fn sample_dataset_from_trajectory<R: Rng + ?Sized>(
    xs: &[Vec<f64>],
    truth: &CovarianceTrajectory,
    rng: &mut R,
) -> Result<Dataset> {
    if xs.len() != truth.len() || truth.is_empty() {
        return Err(argument(format!("{} predictors but {} covariance matrices", xs.len(), truth.len())));
    }
    let p = truth.p();
    let mut y = DMatrix::zeros(xs.len(), p);
    for (i, sigma) in truth.sigmas.iter().enumerate() {
        let draw = sample_gaussian(&truth.mean_at(i), sigma, rng)?;
        y.row_mut(i).copy_from(&draw.transpose());
    }
    Dataset::complete(xs.to_vec(), y)
}

/// A dataset drawn from the model together with the state that generated it.
#[derive(Debug, Clone)]
pub struct PriorDataset {
    pub dataset: Dataset,
    pub truth: CovarianceTrajectory,
    pub state: ModelState,
}

/// Draws a state from the prior and then one observation per predictor.
pub fn simulate_from_prior_dataset<R: Rng + ?Sized>(
    hyper: &Hyperparameters,
    xs: &[Vec<f64>],
    p: usize,
    mode: MeanMode,
    rng: &mut R,
) -> Result<PriorDataset> {
    if xs.is_empty() || p == 0 {
        return Err(argument("need at least one predictor and one response"));
    }
    let state = sample_prior(hyper, xs, p, mode, rng)?;
    let truth = state.trajectory();
    let dataset = sample_dataset_from_trajectory(xs, &truth, rng)?;
    Ok(PriorDataset { dataset, truth, state })
}

/// Output of the spline-knot generator.
#[derive(Debug, Clone)]
pub struct SplineCovariance {
    pub xs: Vec<Vec<f64>>,
    pub trajectory: CovarianceTrajectory,
    /// Grid indices of the knots.
    pub knot_indices: Vec<usize>,
    /// Knot matrices `S(x_k)`.
    pub knot_factors: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub sigma0: DVector<f64>,
}

/// Spline-knot parametric covariance on the grid `1..n` (rescaled to `(0, 1]`).
///
/// At each of `n_knots` evenly spaced knots a `p x p` matrix `S(x_k)` is drawn
/// with columns iid `N(0, Sigma_s)`, `Sigma_s = sum_j s_j s_j'` and
/// `s_j ~ N(m, I)` where `m` ramps linearly from `-(p-1)` to `p-1` in steps of
/// 2. Each element is interpolated by a natural cubic spline and
/// `Sigma(x) = alpha S(x) S(x)' + Sigma_0`, with `alpha` normalizing the
/// largest entry of the first term to 1 and `Sigma_0` diagonal with
/// positive-truncated standard normal entries.
pub fn simulate_spline_covariance<R: Rng + ?Sized>(
    p: usize,
    n: usize,
    n_knots: usize,
    rng: &mut R,
) -> Result<SplineCovariance> {
    if n_knots < 2 || n < n_knots || p == 0 {
        return Err(argument(format!("need p >= 1 and 2 <= n_knots <= n (p = {p}, n = {n}, knots = {n_knots})")));
    }
    let ramp = DVector::from_fn(p, |i, _| -(p as f64 - 1.0) + 2.0 * i as f64);
    let mut s_cov = DMatrix::zeros(p, p);
    for _ in 0..p {
        let s = DVector::from_fn(p, |i, _| ramp[i] + sample_standard_normal(rng));
        s_cov += &s * s.transpose();
    }
    let s_chol = chol_psd(&s_cov)?;

    let knot_indices: Vec<usize> =
        (0..n_knots).map(|k| ((k * (n - 1)) as f64 / (n_knots - 1) as f64).round() as usize).collect();
    let knot_factors: Vec<DMatrix<f64>> = (0..n_knots)
        .map(|_| {
            let mut s = DMatrix::zeros(p, p);
            for c in 0..p {
                let z = DVector::from_fn(p, |_, _| sample_standard_normal(rng));
                s.set_column(c, &(&s_chol.l * z));
            }
            s
        })
        .collect();

    let xs = unit_grid(n);
    let knot_x: Vec<f64> = knot_indices.iter().map(|&i| xs[i][0]).collect();
    let mut factors = vec![DMatrix::zeros(p, p); n];
    for r in 0..p {
        for c in 0..p {
            let values: Vec<f64> = knot_factors.iter().map(|s| s[(r, c)]).collect();
            let spline = NaturalCubicSpline::fit(&knot_x, &values)?;
            for (i, f) in factors.iter_mut().enumerate() {
                f[(r, c)] = spline.eval(xs[i][0]);
            }
        }
    }
    // Knots reproduce S(x_k) exactly.
    for (k, &i) in knot_indices.iter().enumerate() {
        factors[i].copy_from(&knot_factors[k]);
    }

    let products: Vec<DMatrix<f64>> = factors.iter().map(|f| f * f.transpose()).collect();
    let max = products.iter().map(|m| m.max()).fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(crate::error::CovRegError::Numerical("spline covariance has no positive entry".into()));
    }
    let alpha = 1.0 / max;
    let sigma0 = DVector::from_fn(p, |_, _| sample_positive_truncated_normal(rng));
    let sigmas = products
        .into_iter()
        .map(|m| {
            let mut s = m * alpha;
            for j in 0..p {
                s[(j, j)] += sigma0[j];
            }
            s
        })
        .collect();
    Ok(SplineCovariance {
        xs,
        trajectory: CovarianceTrajectory { sigmas, mus: None },
        knot_indices,
        knot_factors,
        alpha,
        sigma0,
    })
}
