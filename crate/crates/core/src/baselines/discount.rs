//! Wishart matrix discounting: a discount-factor stochastic volatility model
//! for zero-mean series, fitted by forward filtering backward sampling.
//!
//! The precision `Phi_t` evolves so that information is discounted by `beta`
//! each step. Filtering keeps `(h_t, D_t)` with `Phi_t | y_{1:t} ~ W(h_t, D_t^{-1})`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::sample_wishart;
use crate::error::{argument, CovRegError, Result};
use crate::gibbs::PosteriorArchive;
use crate::linalg::chol_psd;
use crate::model::{CovarianceTrajectory, Dataset};

/// Number of backward-sampled trajectories kept by default.
pub const DEFAULT_DISCOUNT_DRAWS: usize = 100;

/// Filtered law `W(h, D^{-1})` of the precision at one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountState {
    pub h: f64,
    pub d: DMatrix<f64>,
    pub beta: f64,
}

impl DiscountState {
    /// Filtered mean of the precision, `h D^{-1}`.
    pub fn precision_mean(&self) -> Result<DMatrix<f64>> {
        Ok(chol_psd(&self.d)?.inverse() * self.h)
    }
}

/// Discount factor giving constant degrees of freedom `h0`: `1 - 1/h0`.
pub fn steady_state_beta(h0: f64) -> Result<f64> {
    if !(h0 > 1.0) {
        return Err(argument(format!("h0 must exceed 1, got {h0}")));
    }
    Ok(1.0 - 1.0 / h0)
}

/// Checks `(p - 2)/(p - 1) < beta <= 1` and `h0 > p - 1`.
pub fn check_discount(p: usize, beta: f64, h0: f64) -> Result<()> {
    let lower = if p >= 2 { (p as f64 - 2.0) / (p as f64 - 1.0) } else { 0.0 };
    if !(beta > lower && beta <= 1.0) {
        return Err(argument(format!("discount factor {beta} outside ({lower}, 1] for p = {p}")));
    }
    if !(h0 > p as f64 - 1.0) {
        return Err(argument(format!("initial degrees of freedom {h0} must exceed p - 1 = {}", p as f64 - 1.0)));
    }
    Ok(())
}

/// Forward filter: `D_t = beta D_{t-1} + y_t y_t'` and `h_t = beta h_{t-1} + 1`.
/// Rows of the dataset are the time points in order; any unobserved cell
/// is rejected.
pub fn mdw_forward_filter(data: &Dataset, beta: f64, h0: f64, d0: &DMatrix<f64>) -> Result<Vec<DiscountState>> {
    let (n, p) = (data.n(), data.p());
    check_discount(p, beta, h0)?;
    if d0.nrows() != p || d0.ncols() != p {
        return Err(argument("D0 must be p x p"));
    }
    chol_psd(d0)?;
    if data.missing_count() > 0 {
        return Err(CovRegError::Unsupported(format!(
            "matrix discounting needs complete data, found {} unobserved cells",
            data.missing_count()
        )));
    }
    let mut states = Vec::with_capacity(n);
    let (mut h, mut d) = (h0, d0.clone());
    for t in 0..n {
        let y = data.y.row(t).transpose();
        d *= beta;
        d.ger(1.0, &y, &y, 1.0);
        h = beta * h + 1.0;
        states.push(DiscountState { h, d: d.clone(), beta });
    }
    Ok(states)
}

/// One backward pass: `Phi_T ~ W(h_T, D_T^{-1})`, then
/// `Phi_t = beta Phi_{t+1} + Upsilon_t` with `Upsilon_t ~ W((1 - beta) h_t, D_t^{-1})`.
/// Returns `Sigma_t = Phi_t^{-1}`.
pub fn mdw_backward_sample<R: Rng + ?Sized>(filtered: &[DiscountState], rng: &mut R) -> Result<CovarianceTrajectory> {
    let last = filtered.last().ok_or_else(|| argument("no filtered states"))?;
    let beta = last.beta;
    let scales: Vec<DMatrix<f64>> = filtered.iter().map(|s| chol_psd(&s.d).map(|c| c.inverse())).collect::<Result<_>>()?;
    let t_len = filtered.len();
    let mut phis = vec![DMatrix::zeros(0, 0); t_len];
    phis[t_len - 1] = sample_wishart(last.h, &scales[t_len - 1], rng)?;
    for t in (0..t_len - 1).rev() {
        let mut phi = &phis[t + 1] * beta;
        let df = (1.0 - beta) * filtered[t].h;
        if df > 0.0 {
            phi += sample_wishart(df, &scales[t], rng)?;
        }
        phis[t] = phi;
    }
    let sigmas = phis
        .iter()
        .enumerate()
        .map(|(t, phi)| {
            chol_psd(phi)
                .map(|c| c.inverse())
                .map_err(|e| CovRegError::Numerical(format!("discount precision at t = {t} is not invertible: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(CovarianceTrajectory { sigmas, mus: None })
}

/// Filters once with `D_0 = h0 I` and keeps `n_draws` backward samples.
pub fn fit_matrix_discounting(data: &Dataset, beta: f64, h0: f64, n_draws: usize, seed: u64) -> Result<PosteriorArchive> {
    if n_draws == 0 {
        return Err(argument("need at least one backward draw"));
    }
    let d0 = DMatrix::identity(data.p(), data.p()) * h0;
    let filtered = mdw_forward_filter(data, beta, h0, &d0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = PosteriorArchive::new("matrix-discounting", data.xs.clone());
    for m in 0..n_draws {
        let draw = mdw_backward_sample(&filtered, &mut rng)?;
        for j in 0..data.p() {
            archive.push_trace(&format!("sigma[{j}]"), draw.sigmas[draw.len() - 1][(j, j)]);
        }
        archive.iterations.push(m + 1);
        archive.draws.push(draw);
    }
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::unit_grid;
    use approx::assert_relative_eq;

    fn series(n: usize, p: usize) -> Dataset {
        let y = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 3) as f64).sin());
        Dataset::complete(unit_grid(n), y).unwrap()
    }

    #[test]
    fn no_discount_accumulates() {
        let data = series(6, 3);
        let d0 = DMatrix::identity(3, 3) * 2.0;
        let states = mdw_forward_filter(&data, 1.0, 5.0, &d0).unwrap();
        let expected = &d0 + data.y.transpose() * &data.y;
        assert_relative_eq!(states[5].d, expected, epsilon = 1e-12);
        assert_relative_eq!(states[5].h, 11.0);
    }

    #[test]
    fn steady_degrees_of_freedom() {
        let data = series(30, 4);
        let beta = steady_state_beta(40.0).unwrap();
        assert_relative_eq!(beta, 1.0 - 1.0 / 40.0);
        let states = mdw_forward_filter(&data, beta, 40.0, &(DMatrix::identity(4, 4) * 40.0)).unwrap();
        for s in &states {
            assert_relative_eq!(s.h, 40.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn filter_is_deterministic() {
        let data = series(10, 3);
        let d0 = DMatrix::identity(3, 3);
        assert_eq!(mdw_forward_filter(&data, 0.9, 4.0, &d0).unwrap(), mdw_forward_filter(&data, 0.9, 4.0, &d0).unwrap());
    }

    #[test]
    fn beta_guard() {
        let data = series(5, 4);
        let d0 = DMatrix::identity(4, 4);
        assert!(mdw_forward_filter(&data, 0.6, 10.0, &d0).is_err());
        assert!(mdw_forward_filter(&data, 0.7, 10.0, &d0).is_ok());
        assert!(mdw_forward_filter(&data, 1.01, 10.0, &d0).is_err());
        assert!(mdw_forward_filter(&data, 0.9, 2.0, &d0).is_err());
    }

    #[test]
    fn missing_cells_rejected() {
        let data = series(5, 2);
        let mut hide = DMatrix::from_element(5, 2, false);
        hide[(2, 1)] = true;
        let err = mdw_forward_filter(&data.with_hidden(&hide).unwrap(), 0.9, 3.0, &DMatrix::identity(2, 2));
        assert!(matches!(err, Err(CovRegError::Unsupported(_))));
    }

    #[test]
    fn terminal_draw_matches_filtered_mean() {
        let data = series(8, 3);
        let states = mdw_forward_filter(&data, 0.9, 6.0, &(DMatrix::identity(3, 3) * 6.0)).unwrap();
        let target = states[7].precision_mean().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 4000;
        let mut acc = DMatrix::zeros(3, 3);
        let mut sq = DMatrix::zeros(3, 3);
        for _ in 0..m {
            let traj = mdw_backward_sample(&states, &mut rng).unwrap();
            let phi = chol_psd(&traj.sigmas[7]).unwrap().inverse();
            sq += phi.component_mul(&phi);
            acc += phi;
        }
        let mean = &acc / m as f64;
        let var = sq / m as f64 - mean.component_mul(&mean);
        for i in 0..3 {
            for j in 0..3 {
                let se = (var[(i, j)] / m as f64).sqrt();
                assert!((mean[(i, j)] - target[(i, j)]).abs() < 4.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn near_unit_discount_is_nearly_constant() {
        let data = series(20, 3);
        let states = mdw_forward_filter(&data, 0.9999, 5.0, &(DMatrix::identity(3, 3) * 5.0)).unwrap();
        let traj = mdw_backward_sample(&states, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for t in 1..20 {
            let step = (&traj.sigmas[t] - &traj.sigmas[t - 1]).amax() / traj.sigmas[t].amax();
            assert!(step < 1e-3, "t {t}: {step}");
        }
    }

    #[test]
    fn single_point_series() {
        let data = series(1, 2);
        let states = mdw_forward_filter(&data, 0.9, 3.0, &DMatrix::identity(2, 2)).unwrap();
        let traj = mdw_backward_sample(&states, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(chol_psd(&traj.sigmas[0]).is_ok());
    }
}
