//! Random variate helpers: gamma in shape/rate form, truncated normal,
//! Wishart and inverse-Wishart matrices.
//!
//! `Ga(a, b)` always means shape `a` and RATE `b` (mean `a / b`).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{argument, Result};
use crate::linalg::{chol_psd, standard_normal_vector, symmetrize};

/// Draws from `Ga(shape, rate)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "gamma({shape}, {rate})");
    Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng)
}

pub fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Standard normal truncated to `(0, inf)`, by rejection.
pub fn sample_positive_truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z = sample_standard_normal(rng);
        if z > 0.0 {
            return z;
        }
    }
}

/// Mean of `sigma^2` when `sigma^-2 ~ Ga(a, b)`; requires `a > 1`.
pub fn inverse_gamma_mean(a: f64, b: f64) -> Result<f64> {
    if a <= 1.0 {
        return Err(argument(format!("inverse-gamma mean undefined for shape {a} <= 1")));
    }
    Ok(b / (a - 1.0))
}

/// Variance of `sigma^2` when `sigma^-2 ~ Ga(a, b)`; requires `a > 2`.
pub fn inverse_gamma_variance(a: f64, b: f64) -> Result<f64> {
    if a <= 2.0 {
        return Err(argument(format!("inverse-gamma variance undefined for shape {a} <= 2")));
    }
    Ok(b * b / ((a - 1.0) * (a - 1.0) * (a - 2.0)))
}

const INTEGER_DF_TOL: f64 = 1e-9;

/// Draws `W ~ Wishart(df, scale)` with `E[W] = df * scale`.
///
/// Uses the Bartlett decomposition when `df > p - 1`. Integral `df <= p - 1`
/// gives the singular Wishart as a sum of `df` outer products. Other
/// fractional degrees of freedom below `p - 1` have no Wishart law; they are
/// approximated by `df / r` times a sum of `r = ceil(df)` outer products,
/// which keeps the mean exact.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(df > 0.0) || !df.is_finite() {
        return Err(argument(format!("wishart degrees of freedom must be positive, got {df}")));
    }
    let chol = chol_psd(scale)?;
    let mut w = if df > (p as f64) - 1.0 {
        let mut a = DMatrix::zeros(p, p);
        for i in 0..p {
            let chi = ChiSquared::new(df - i as f64).map_err(|e| argument(e.to_string()))?;
            a[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = sample_standard_normal(rng);
            }
        }
        let la = &chol.l * a;
        &la * la.transpose()
    } else {
        let r = df.round();
        let (count, weight) = if (df - r).abs() < INTEGER_DF_TOL { (r as usize, 1.0) } else { (df.ceil() as usize, df / df.ceil()) };
        let mut acc = DMatrix::zeros(p, p);
        for _ in 0..count {
            let z = &chol.l * standard_normal_vector(p, rng);
            acc.ger(weight, &z, &z, 1.0);
        }
        acc
    };
    symmetrize(&mut w);
    Ok(w)
}

/// Draws `S ~ IW(df, scale)`, i.e. `S^-1 ~ Wishart(df, scale^-1)`, with
/// mean `scale / (df - p - 1)`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(argument(format!("inverse-Wishart needs df > p - 1, got {df} with p = {p}")));
    }
    let scale_inv = chol_psd(scale)?.inverse();
    let w = sample_wishart(df, &scale_inv, rng)?;
    Ok(chol_psd(&w)?.inverse())
}
