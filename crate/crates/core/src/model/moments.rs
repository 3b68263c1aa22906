//! Closed-form prior moments of `Sigma(x)` given the shrinkage variables.
//!
//! Loadings are integrated out with `phi` and `tau` held fixed; second
//! moments are expectations over `Theta` of the covariance given `Theta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{inverse_gamma_mean, inverse_gamma_variance};
use crate::error::{argument, Result};
use crate::gp_kernel::{se_kernel, KernelParams};

/// How the kernel correlation enters the cross-location covariance of
/// `Sigma(x)` entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelExponent {
    /// `c(x, x')`
    Linear,
    /// `c(x, x')^2`; matches Monte-Carlo draws from the prior.
    #[default]
    Squared,
}

impl KernelExponent {
    pub fn power(self) -> f64 {
        match self {
            KernelExponent::Linear => 1.0,
            KernelExponent::Squared => 2.0,
        }
    }

    pub fn apply(self, c: f64) -> f64 {
        match self {
            KernelExponent::Linear => c,
            KernelExponent::Squared => c * c,
        }
    }
}

/// Mean and variance of `sigma_j^2` under `sigma_j^-2 ~ Ga(a, b)`.
pub fn noise_moments(a_sigma: f64, b_sigma: f64) -> Result<(f64, f64)> {
    Ok((inverse_gamma_mean(a_sigma, b_sigma)?, inverse_gamma_variance(a_sigma, b_sigma)?))
}

fn check_shapes(phi: &DMatrix<f64>, tau: &DVector<f64>) -> Result<()> {
    if phi.ncols() != tau.len() {
        return Err(argument(format!("phi has {} columns but tau has {} entries", phi.ncols(), tau.len())));
    }
    if phi.iter().chain(tau.iter()).any(|v| !(*v > 0.0)) {
        return Err(argument("phi and tau must be strictly positive"));
    }
    Ok(())
}

fn loading_variance(phi: &DMatrix<f64>, tau: &DVector<f64>, j: usize, l: usize) -> f64 {
    1.0 / (phi[(j, l)] * tau[l])
}

/// `E[Sigma(x)] = diag(k sum_l 1/(phi_jl tau_l) + mu_sigma)`.
pub fn prior_mean_covariance(k_star: usize, phi: &DMatrix<f64>, tau: &DVector<f64>, mu_sigma: f64) -> Result<DMatrix<f64>> {
    check_shapes(phi, tau)?;
    if !mu_sigma.is_finite() {
        return Err(argument("prior mean of sigma^2 is undefined"));
    }
    let p = phi.nrows();
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i != j {
            0.0
        } else {
            k_star as f64 * (0..tau.len()).map(|l| loading_variance(phi, tau, i, l)).sum::<f64>() + mu_sigma
        }
    }))
}

/// `cov(Sigma_ij(x), Sigma_uv(x2))` under the prior.
///
/// For two diagonal elements `i != u` it is `2 k g sum_l v_il v_ul`; any
/// other pair with `{i, j} != {u, v}` is uncorrelated. For `i != j` it is
/// `k g (sum_l v_il v_jl + A_i A_j)`; for `i == j` it is
/// `k g (4 sum_l v_il^2 + 2 A_i^2) + sigma_var`, with `v_il = 1/(phi_il tau_l)`,
/// `A_i = sum_l v_il` and `g = c(x, x2)` or `c(x, x2)^2` per `exponent`.
#[allow(clippy::too_many_arguments)]
pub fn prior_cov_elements(
    k_star: usize,
    phi: &DMatrix<f64>,
    tau: &DVector<f64>,
    sigma_var: f64,
    (i, j): (usize, usize),
    (u, v): (usize, usize),
    x: &[f64],
    x2: &[f64],
    kernel: &KernelParams,
    exponent: KernelExponent,
) -> Result<f64> {
    check_shapes(phi, tau)?;
    let p = phi.nrows();
    if [i, j, u, v].iter().any(|&idx| idx >= p) {
        return Err(argument(format!("element index out of range for p = {p}")));
    }
    let g = exponent.apply(se_kernel(x, x2, kernel)?);
    let k = k_star as f64;
    let l = tau.len();
    let same = (i == u && j == v) || (i == v && j == u);
    if !same {
        if i == j && u == v {
            let cross: f64 = (0..l).map(|h| loading_variance(phi, tau, i, h) * loading_variance(phi, tau, u, h)).sum();
            return Ok(2.0 * k * g * cross);
        }
        return Ok(0.0);
    }
    let a_i: f64 = (0..l).map(|h| loading_variance(phi, tau, i, h)).sum();
    if i == j {
        if !sigma_var.is_finite() {
            return Err(argument("variance of sigma^2 is undefined"));
        }
        let sq: f64 = (0..l).map(|h| loading_variance(phi, tau, i, h).powi(2)).sum();
        Ok(k * g * (4.0 * sq + 2.0 * a_i * a_i) + sigma_var)
    } else {
        let a_j: f64 = (0..l).map(|h| loading_variance(phi, tau, j, h)).sum();
        let cross: f64 = (0..l).map(|h| loading_variance(phi, tau, i, h) * loading_variance(phi, tau, j, h)).sum();
        Ok(k * g * (cross + a_i * a_j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_mean_is_identity() {
        let m = prior_mean_covariance(1, &DMatrix::from_element(2, 1, 1.0), &DVector::from_element(1, 1.0), 0.0).unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
    }

    #[test]
    fn hand_evaluated_mean() {
        let phi = DMatrix::from_element(2, 2, 2.0);
        let tau = DVector::from_vec(vec![1.0, 4.0]);
        let m = prior_mean_covariance(3, &phi, &tau, 0.5).unwrap();
        assert_eq!(m[(0, 0)], 2.375);
        assert_eq!(m[(1, 1)], 2.375);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn mean_needs_finite_noise_mean() {
        assert!(noise_moments(1.0, 0.1).is_err());
        let phi = DMatrix::from_element(2, 1, 1.0);
        assert!(prior_mean_covariance(1, &phi, &DVector::from_element(1, 1.0), f64::INFINITY).is_err());
    }

    #[test]
    fn distinct_pairs_are_uncorrelated() {
        let phi = DMatrix::from_element(3, 2, 1.5);
        let tau = DVector::from_vec(vec![1.0, 2.0]);
        let kp = KernelParams::with_kappa(10.0).unwrap();
        let c = prior_cov_elements(2, &phi, &tau, 0.3, (0, 1), (0, 2), &[0.1], &[0.1], &kp, KernelExponent::Squared).unwrap();
        assert_eq!(c, 0.0);
        let mixed = prior_cov_elements(2, &phi, &tau, 0.3, (0, 0), (0, 1), &[0.1], &[0.1], &kp, KernelExponent::Squared).unwrap();
        assert_eq!(mixed, 0.0);
        let sym = prior_cov_elements(2, &phi, &tau, 0.3, (0, 1), (1, 0), &[0.1], &[0.2], &kp, KernelExponent::Squared).unwrap();
        let direct = prior_cov_elements(2, &phi, &tau, 0.3, (0, 1), (0, 1), &[0.1], &[0.2], &kp, KernelExponent::Squared).unwrap();
        assert_eq!(sym, direct);
    }

    #[test]
    fn distinct_diagonal_elements_share_dictionary_draws() {
        let phi = DMatrix::from_element(2, 2, 2.0);
        let tau = DVector::from_vec(vec![1.0, 4.0]);
        let kp = KernelParams::with_kappa(10.0).unwrap();
        // v = (0.5, 0.125) in both rows: 2 k c^2 (0.25 + 1/64) at c = 1.
        let c = prior_cov_elements(3, &phi, &tau, 0.3, (0, 0), (1, 1), &[0.2], &[0.2], &kp, KernelExponent::Squared).unwrap();
        assert!((c - 6.0 * (0.25 + 1.0 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn far_apart_diagonal_keeps_noise_variance() {
        let phi = DMatrix::from_element(2, 3, 1.5);
        let tau = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        let kp = KernelParams::with_kappa(10.0).unwrap();
        for e in [KernelExponent::Linear, KernelExponent::Squared] {
            let c = prior_cov_elements(4, &phi, &tau, 0.7, (1, 1), (1, 1), &[0.0], &[100.0], &kp, e).unwrap();
            assert_eq!(c, 0.7);
            let off = prior_cov_elements(4, &phi, &tau, 0.7, (0, 1), (0, 1), &[0.0], &[100.0], &kp, e).unwrap();
            assert_eq!(off, 0.0);
        }
    }

    #[test]
    fn exponent_controls_decay() {
        let phi = DMatrix::from_element(2, 2, 1.0);
        let tau = DVector::from_vec(vec![1.0, 2.0]);
        let kp = KernelParams::with_kappa(10.0).unwrap();
        let at = |e, d: f64| prior_cov_elements(3, &phi, &tau, 0.0, (0, 1), (0, 1), &[0.0], &[d], &kp, e).unwrap();
        let d = 0.2;
        let lin = at(KernelExponent::Linear, d) / at(KernelExponent::Linear, 0.0);
        let sq = at(KernelExponent::Squared, d) / at(KernelExponent::Squared, 0.0);
        assert!((lin - (-10.0 * d * d).exp()).abs() < 1e-12);
        assert!((sq - (-20.0 * d * d).exp()).abs() < 1e-12);
    }
}
