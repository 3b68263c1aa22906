use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::types::{Hyperparameters, MeanMode, ModelState, ShrinkageState};
use crate::distributions::{sample_gamma, sample_standard_normal};
use crate::error::{argument, Result};
use crate::gp_kernel::{gp_draw_factored, gram_matrix};

/// Draws `phi_jl ~ Ga(3/2, 3/2)`, `delta_1 ~ Ga(a1, 1)` and
/// `delta_h ~ Ga(a2, 1)` for `h >= 2`.
pub fn sample_shrinkage<R: Rng + ?Sized>(hyper: &Hyperparameters, p: usize, rng: &mut R) -> ShrinkageState {
    let l = hyper.l_star;
    let mut phi = DMatrix::zeros(p, l);
    for j in 0..p {
        for h in 0..l {
            phi[(j, h)] = sample_gamma(1.5, 1.5, rng);
        }
    }
    let delta = DVector::from_fn(l, |h, _| sample_gamma(if h == 0 { hyper.a1 } else { hyper.a2 }, 1.0, rng));
    ShrinkageState::new(phi, delta)
}

/// One draw of every latent quantity from the prior, at the predictors `xs`.
pub fn sample_prior<R: Rng + ?Sized>(
    hyper: &Hyperparameters,
    xs: &[Vec<f64>],
    p: usize,
    mode: MeanMode,
    rng: &mut R,
) -> Result<ModelState> {
    hyper.validate()?;
    let shrinkage = sample_shrinkage(hyper, p, rng);
    sample_prior_with_shrinkage(hyper, shrinkage, xs, p, mode, rng)
}

/// Prior draw with the shrinkage variables held fixed.
pub fn sample_prior_with_shrinkage<R: Rng + ?Sized>(
    hyper: &Hyperparameters,
    shrinkage: ShrinkageState,
    xs: &[Vec<f64>],
    p: usize,
    mode: MeanMode,
    rng: &mut R,
) -> Result<ModelState> {
    let (l, k, n) = (hyper.l_star, hyper.k_star, xs.len());
    if shrinkage.phi.nrows() != p || shrinkage.phi.ncols() != l || shrinkage.tau.len() != l {
        return Err(argument("shrinkage state does not match p x L*"));
    }
    let sd = shrinkage.loading_variances().map(f64::sqrt);
    let theta = DMatrix::from_fn(p, l, |j, h| sd[(j, h)] * sample_standard_normal(rng));

    let chol = gram_matrix(xs, &hyper.kernel)?.factor()?;
    let mut xi = vec![DMatrix::zeros(l, k); n];
    for h in 0..l {
        for m in 0..k {
            let path = gp_draw_factored(&chol, rng);
            for (i, block) in xi.iter_mut().enumerate() {
                block[(h, m)] = path[i];
            }
        }
    }

    let sigma0 = DVector::from_fn(p, |_, _| 1.0 / sample_gamma(hyper.a_sigma, hyper.b_sigma, rng));

    let (psi, nu) = match mode {
        MeanMode::ZeroMean => (DMatrix::zeros(k, n), DMatrix::from_fn(k, n, |_, _| sample_standard_normal(rng))),
        MeanMode::LatentMean => {
            let mut psi = DMatrix::zeros(k, n);
            for m in 0..k {
                psi.row_mut(m).copy_from(&gp_draw_factored(&chol, rng).transpose());
            }
            (psi, DMatrix::from_fn(k, n, |_, _| sample_standard_normal(rng)))
        }
    };
    let eta = &psi + &nu;
    Ok(ModelState { theta, xi, eta, psi, nu, sigma0, shrinkage, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_kernel::KernelParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (1..=n).map(|i| vec![i as f64 / n as f64]).collect()
    }

    #[test]
    fn prior_draw_is_reproducible_and_valid() {
        let hyper = Hyperparameters::generating_defaults();
        let a = sample_prior(&hyper, &grid(12), 3, MeanMode::LatentMean, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = sample_prior(&hyper, &grid(12), 3, MeanMode::LatentMean, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.shrinkage.tau[1], a.shrinkage.delta[0] * a.shrinkage.delta[1]);
    }

    #[test]
    fn heavy_shrinkage_orders_columns() {
        let hyper = Hyperparameters {
            a1: 2.0,
            a2: 1000.0,
            l_star: 4,
            k_star: 1,
            kernel: KernelParams::with_kappa(10.0).unwrap(),
            ..Hyperparameters::fitting_defaults()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 1000;
        let mut sq = [0.0f64; 4];
        for _ in 0..draws {
            let s = sample_prior(&hyper, &grid(1), 3, MeanMode::ZeroMean, &mut rng).unwrap();
            for h in 0..4 {
                sq[h] += s.theta.column(h).norm_squared();
            }
        }
        for h in 2..4 {
            assert!(sq[h] < 0.01 * sq[0], "column {h}: {} vs {}", sq[h], sq[0]);
        }
    }
}
