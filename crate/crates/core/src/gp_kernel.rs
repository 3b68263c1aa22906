//! Squared-exponential kernel, Gram matrices and correlated Gaussian draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::linalg::{chol_psd, sample_with_factor, CholFactor};

/// Default diagonal jitter added to every Gram matrix.
pub const DEFAULT_NUGGET: f64 = 1e-5;

/// Parameters of `c(x, x') = exp(-kappa * |x - x'|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Inverse squared length-scale.
    pub kappa: f64,
    /// Diagonal jitter added to Gram matrices.
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(kappa: f64, nugget: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(argument(format!("kappa must be positive and finite, got {kappa}")));
        }
        if !(nugget >= 0.0) || !nugget.is_finite() {
            return Err(argument(format!("nugget must be nonnegative, got {nugget}")));
        }
        Ok(Self { kappa, nugget })
    }

    pub fn with_kappa(kappa: f64) -> Result<Self> {
        Self::new(kappa, DEFAULT_NUGGET)
    }
}

fn squared_distance(x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(argument(format!("predictor dimension mismatch: {} vs {}", x.len(), x2.len())));
    }
    Ok(x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Kernel correlation between two predictors.
pub fn se_kernel(x: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    Ok((-params.kappa * squared_distance(x, x2)?).exp())
}

/// Gram matrix of a predictor set with its source points.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub source_points: Vec<Vec<f64>>,
    pub params: KernelParams,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn factor(&self) -> Result<CholFactor> {
        chol_psd(&self.values)
    }
}

/// Builds `K_ij = c(x_i, x_j) + nugget * [i == j]`.
pub fn gram_matrix(xs: &[Vec<f64>], params: &KernelParams) -> Result<GramMatrix> {
    if xs.is_empty() {
        return Err(argument("gram matrix needs at least one point"));
    }
    let n = xs.len();
    let mut values = DMatrix::zeros(n, n);
    for j in 0..n {
        values[(j, j)] = 1.0 + params.nugget;
        for i in 0..j {
            let k = se_kernel(&xs[i], &xs[j], params)?;
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
    }
    Ok(GramMatrix { values, source_points: xs.to_vec(), params: *params })
}

/// One zero-mean Gaussian draw with covariance equal to the Gram matrix.
pub fn gp_draw<R: Rng + ?Sized>(gram: &GramMatrix, rng: &mut R) -> Result<DVector<f64>> {
    let chol = gram.factor()?;
    Ok(gp_draw_factored(&chol, rng))
}

/// Same as [`gp_draw`] but reusing an existing factor.
pub fn gp_draw_factored<R: Rng + ?Sized>(chol: &CholFactor, rng: &mut R) -> DVector<f64> {
    sample_with_factor(&DVector::zeros(chol.dim()), chol, rng)
}

/// Rescales every predictor coordinate to `(0, 1]` by dividing by its
/// maximum absolute value after shifting so the minimum maps to `1/n`.
///
/// For the integer grid `1..=n` this yields `i / n`.
pub fn rescale_unit_interval(xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if xs.is_empty() {
        return Vec::new();
    }
    let q = xs[0].len();
    let n = xs.len() as f64;
    let mut out = xs.to_vec();
    for c in 0..q {
        let lo = xs.iter().map(|x| x[c]).fold(f64::INFINITY, f64::min);
        let hi = xs.iter().map(|x| x[c]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for (o, x) in out.iter_mut().zip(xs) {
            o[c] = if span > 0.0 {
                // maps lo -> 1/n and hi -> 1 on a regular grid of n points
                let step = span / (n - 1.0).max(1.0);
                (x[c] - lo + step) / (span + step)
            } else {
                1.0
            };
        }
    }
    out
}
