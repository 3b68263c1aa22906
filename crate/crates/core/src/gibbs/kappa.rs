//! Choosing the kernel length-scale `kappa`: a data-driven heuristic based on
//! local covariance estimates, and the exact marginal likelihood on a grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::steps::ObservedData;
use crate::error::{argument, CovRegError, Result};
use crate::gp_kernel::{se_kernel, KernelParams};
use crate::linalg::{chol_psd, standard_normal_vector};
use crate::model::{Dataset, KernelExponent, ModelState};
use crate::spline::NaturalCubicSpline;

/// Largest number of observed cells for which the grid marginal is evaluated.
pub const DEFAULT_MARGINAL_CAP: usize = 2000;

/// Value returned when no covariance element shows predictor dependence
/// above the sampling noise.
pub const KAPPA_FLOOR: f64 = 1e-3;

/// Default bin half-width: the smallest integer above `p / 2`.
pub fn default_bin_halfwidth(p: usize) -> usize {
    p / 2 + 1
}

/// Spline-smoothed Cholesky factors of local sample covariances.
#[derive(Debug, Clone)]
pub struct LocalCovariance {
    p: usize,
    /// Predictor values at the knots.
    pub knot_x: Vec<f64>,
    /// Cholesky factors of the bin covariances at the knots.
    pub knot_factors: Vec<DMatrix<f64>>,
    // lower-triangular elements in column-major order
    splines: Vec<NaturalCubicSpline>,
}

impl LocalCovariance {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Interpolated Cholesky factor `C(x)`.
    pub fn factor_at(&self, x: f64) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.p, self.p);
        let mut idx = 0;
        for col in 0..self.p {
            for row in col..self.p {
                c[(row, col)] = self.splines[idx].eval(x);
                idx += 1;
            }
        }
        c
    }

    /// `C(x) C(x)'`.
    pub fn covariance_at(&self, x: f64) -> DMatrix<f64> {
        let c = self.factor_at(x);
        &c * c.transpose()
    }
}

fn sorted_scalar_predictors(data: &Dataset) -> Result<(Vec<usize>, Vec<f64>)> {
    let xs = data
        .scalar_predictors()
        .ok_or_else(|| CovRegError::Unsupported("the kappa heuristic needs a scalar predictor".into()))?;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sorted = order.iter().map(|&i| xs[i]).collect();
    Ok((order, sorted))
}

/// Pairwise-complete sample covariance of the rows `rows`, projected onto
/// the positive definite cone.
fn bin_covariance(data: &Dataset, rows: &[usize]) -> Result<DMatrix<f64>> {
    let p = data.p();
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        let vals: Vec<f64> = rows.iter().filter(|&&i| data.observed[(i, j)]).map(|&i| data.y[(i, j)]).collect();
        if vals.len() < 2 {
            return Err(CovRegError::InsufficientData(format!(
                "column {j} has fewer than 2 observations in a local bin; use wider bins or fewer knots"
            )));
        }
        mean[j] = vals.iter().sum::<f64>() / vals.len() as f64;
    }
    let mut cov = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let mut acc = 0.0;
            let mut count = 0usize;
            for &i in rows {
                if data.observed[(i, a)] && data.observed[(i, b)] {
                    acc += (data.y[(i, a)] - mean[a]) * (data.y[(i, b)] - mean[b]);
                    count += 1;
                }
            }
            if count < 2 {
                return Err(CovRegError::InsufficientData(format!(
                    "columns {a} and {b} are jointly observed fewer than 2 times in a local bin"
                )));
            }
            cov[(a, b)] = acc / (count - 1) as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let eig = cov.symmetric_eigen();
    let floor = 1e-6 * (eig.eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / p as f64).max(1e-300);
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// Local-bin sample covariances at `n_knots` evenly spaced knots, their
/// Cholesky factors and a natural cubic spline through each factor entry.
///
/// Bins hold `2 * bin_halfwidth + 1` consecutive points (in predictor order)
/// centred on each knot and shifted inwards at the ends of the grid.
pub fn local_covariance(data: &Dataset, n_knots: usize, bin_halfwidth: usize) -> Result<LocalCovariance> {
    let (n, p) = (data.n(), data.p());
    if 2 * bin_halfwidth <= p {
        return Err(argument(format!("bin half-width {bin_halfwidth} must exceed p/2 = {}", p as f64 / 2.0)));
    }
    let width = 2 * bin_halfwidth + 1;
    if n_knots < 2 || width > n {
        return Err(CovRegError::InsufficientData(format!(
            "need at least 2 knots and bins of {width} points within {n} observations; use smaller bins or fewer knots"
        )));
    }
    let (order, xs) = sorted_scalar_predictors(data)?;
    let mut knot_x = Vec::with_capacity(n_knots);
    let mut knot_factors = Vec::with_capacity(n_knots);
    for k in 0..n_knots {
        let centre = ((k * (n - 1)) as f64 / (n_knots - 1) as f64).round() as usize;
        let start = centre.saturating_sub(bin_halfwidth).min(n - width);
        let rows: Vec<usize> = order[start..start + width].to_vec();
        let cov = bin_covariance(data, &rows)?;
        if let Some(&last) = knot_x.last() {
            if xs[centre] <= last {
                return Err(argument("knots collapse onto repeated predictor values; use fewer knots"));
            }
        }
        knot_x.push(xs[centre]);
        knot_factors.push(chol_psd(&cov)?.l);
    }
    let mut splines = Vec::with_capacity(p * (p + 1) / 2);
    for col in 0..p {
        for row in col..p {
            let vals: Vec<f64> = knot_factors.iter().map(|c| c[(row, col)]).collect();
            splines.push(NaturalCubicSpline::fit(&knot_x, &vals)?);
        }
    }
    Ok(LocalCovariance { p, knot_x, knot_factors, splines })
}

/// Settings of the length-scale heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaHeuristicConfig {
    pub n_knots: usize,
    /// Defaults to [`default_bin_halfwidth`].
    pub bin_halfwidth: Option<usize>,
    /// Replicates of the homoscedastic reference used to subtract the
    /// autocorrelation that binning and smoothing create on their own.
    pub reference_replicates: usize,
    pub reference_seed: u64,
    /// Minimum ratio of an element's variance over `x` to the reference
    /// variance for the element to be used.
    pub min_signal_ratio: f64,
    /// How `kappa` enters the autocorrelation of covariance elements.
    pub exponent: KernelExponent,
}

impl Default for KappaHeuristicConfig {
    fn default() -> Self {
        Self {
            n_knots: 20,
            bin_halfwidth: None,
            reference_replicates: 20,
            reference_seed: 0x6b61_7070_61,
            min_signal_ratio: 4.0,
            exponent: KernelExponent::Squared,
        }
    }
}

/// Output of the heuristic with the evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaEstimate {
    pub kappa: f64,
    /// Element `(a, b)` whose autocorrelation was fitted, if any qualified.
    pub element: Option<(usize, usize)>,
    /// Variance ratio of the chosen element against the reference.
    pub signal_ratio: f64,
    /// `(squared distance, autocorrelation)` pairs used in the fit.
    pub fit_points: Vec<(f64, f64)>,
}

fn element_autocovariances(local: &LocalCovariance, xs: &[f64], max_lag: usize) -> Vec<Vec<f64>> {
    let p = local.p();
    let n = xs.len();
    let sigmas: Vec<DMatrix<f64>> = xs.iter().map(|&x| local.covariance_at(x)).collect();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for a in 0..p {
        for b in a..p {
            let s: Vec<f64> = sigmas.iter().map(|m| m[(a, b)]).collect();
            let mean = s.iter().sum::<f64>() / n as f64;
            let acov = (0..=max_lag)
                .map(|h| (0..n - h).map(|t| (s[t] - mean) * (s[t + h] - mean)).sum::<f64>() / n as f64)
                .collect();
            out.push(acov);
        }
    }
    out
}

fn element_index(p: usize, idx: usize) -> (usize, usize) {
    let mut k = 0;
    for a in 0..p {
        for b in a..p {
            if k == idx {
                return (a, b);
            }
            k += 1;
        }
    }
    unreachable!("element index in range")
}

/// Heuristic `kappa` with default settings except the knot count and bin
/// half-width.
pub fn kappa_heuristic(data: &Dataset, n_knots: usize, bin_halfwidth: usize) -> Result<f64> {
    let cfg = KappaHeuristicConfig { n_knots, bin_halfwidth: Some(bin_halfwidth), ..Default::default() };
    Ok(kappa_heuristic_detailed(data, &cfg)?.kappa)
}

/// Length-scale heuristic for a scalar, evenly spaced predictor.
///
/// 1. smoothed local covariances `Sigma(x_i) = C(x_i) C(x_i)'` (see
///    [`local_covariance`]);
/// 2. sample autocovariance over lags of every element of `Sigma(x_i)`;
/// 3. the same quantities averaged over replicates drawn from a constant
///    covariance (the pooled knot estimate) are subtracted, which removes the
///    correlation induced by overlapping bins and spline smoothing;
/// 4. among elements whose variance clearly exceeds the reference, the one
///    with the largest autocorrelation area is chosen;
/// 5. `-log ACF(d)` is regressed through the origin on `d^2` over lags with
///    ACF in `(0.05, 1)`; the slope is divided by the kernel exponent.
pub fn kappa_heuristic_detailed(data: &Dataset, cfg: &KappaHeuristicConfig) -> Result<KappaEstimate> {
    let (n, p) = (data.n(), data.p());
    let half = cfg.bin_halfwidth.unwrap_or_else(|| default_bin_halfwidth(p));
    let local = local_covariance(data, cfg.n_knots, half)?;
    let (order, xs) = sorted_scalar_predictors(data)?;
    let span = xs[n - 1] - xs[0];
    if !(span > 0.0) {
        return Err(argument("predictors are all equal"));
    }
    let spacing = span / (n - 1) as f64;
    let max_lag = n / 2;
    let observed = element_autocovariances(&local, &xs, max_lag);

    let pooled = local
        .knot_factors
        .iter()
        .fold(DMatrix::zeros(p, p), |acc, c| acc + c * c.transpose())
        / local.knot_factors.len() as f64;
    let pooled_chol = chol_psd(&pooled)?;
    let mut reference = vec![vec![0.0; max_lag + 1]; observed.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.reference_seed);
    let reps = cfg.reference_replicates.max(1);
    for _ in 0..reps {
        let mut y = DMatrix::zeros(n, p);
        for &i in &order {
            let draw = &pooled_chol.l * standard_normal_vector(p, &mut rng);
            for j in 0..p {
                y[(i, j)] = if data.observed[(i, j)] { draw[j] } else { f64::NAN };
            }
        }
        let replicate = Dataset::new(data.xs.clone(), y, data.observed.clone())?;
        let rep_local = local_covariance(&replicate, cfg.n_knots, half)?;
        for (acc, rep) in reference.iter_mut().zip(element_autocovariances(&rep_local, &xs, max_lag)) {
            for (a, r) in acc.iter_mut().zip(rep) {
                *a += r / reps as f64;
            }
        }
    }

    let mut best: Option<(usize, f64, f64, Vec<f64>)> = None;
    for (idx, (obs, refr)) in observed.iter().zip(&reference).enumerate() {
        let ratio = obs[0] / refr[0].max(1e-300);
        if ratio < cfg.min_signal_ratio {
            continue;
        }
        let signal0 = obs[0] - refr[0];
        let acf: Vec<f64> = obs.iter().zip(refr).map(|(o, r)| (o - r) / signal0).collect();
        let area: f64 = acf.iter().skip(1).take_while(|v| **v > 0.05).sum();
        if best.as_ref().is_none_or(|b| area > b.1) {
            best = Some((idx, area, ratio, acf));
        }
    }
    let Some((idx, _, ratio, acf)) = best else {
        log::info!("no covariance element varies above the reference level; kappa = {KAPPA_FLOOR}");
        return Ok(KappaEstimate { kappa: KAPPA_FLOOR, element: None, signal_ratio: 0.0, fit_points: Vec::new() });
    };
    let fit_points: Vec<(f64, f64)> = acf
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, v)| **v > 0.05)
        .filter(|(_, v)| **v < 1.0)
        .map(|(h, v)| ((h as f64 * spacing).powi(2), *v))
        .collect();
    if fit_points.is_empty() {
        return Err(CovRegError::Numerical("autocorrelation drops below 0.05 within one lag".into()));
    }
    let sxy: f64 = fit_points.iter().map(|(d2, v)| d2 * -v.ln()).sum();
    let sxx: f64 = fit_points.iter().map(|(d2, _)| d2 * d2).sum();
    let kappa = (sxy / sxx / cfg.exponent.power()).max(KAPPA_FLOOR);
    Ok(KappaEstimate { kappa, element: Some(element_index(p, idx)), signal_ratio: ratio, fit_points })
}

/// Log marginal density of the observed responses given `Theta`, `eta` and
/// `Sigma_0` with the dictionary integrated out, for each `kappa` in `grid`.
///
/// The covariance between cells `(i, j)` and `(i', j')` is
/// `(Theta Theta')_{jj'} (eta_i . eta_i') K(x_i, x_i') + sigma_j^2 [same cell]`.
pub fn kappa_grid_logmarginal(
    state: &ModelState,
    data: &ObservedData,
    xs: &[Vec<f64>],
    grid: &[f64],
    nugget: f64,
    cap: usize,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(argument("kappa grid is empty"));
    }
    if xs.len() != data.n() || state.n() != data.n() || state.p() != data.p() {
        return Err(argument("state, data and predictors disagree in size"));
    }
    let cells: Vec<(usize, usize)> =
        (0..data.n()).flat_map(|i| data.observed_in_row(i).iter().map(move |&j| (i, j))).collect();
    let m = cells.len();
    if m > cap {
        return Err(CovRegError::Capacity(format!(
            "{m} observed cells exceed the marginal-likelihood cap of {cap}; the dense evaluation may be computationally infeasible"
        )));
    }
    let tt = &state.theta * state.theta.transpose();
    let ee = state.eta.tr_mul(&state.eta);
    let y = DVector::from_iterator(m, cells.iter().map(|&(i, j)| data.y[(i, j)]));
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    grid.iter()
        .map(|&kappa| {
            let params = KernelParams::new(kappa, nugget)?;
            let mut c = DMatrix::zeros(m, m);
            for b in 0..m {
                let (i2, j2) = cells[b];
                for a in 0..=b {
                    let (i1, j1) = cells[a];
                    let mut k = se_kernel(&xs[i1], &xs[i2], &params)?;
                    if i1 == i2 {
                        k += nugget;
                    }
                    let v = tt[(j1, j2)] * ee[(i1, i2)] * k;
                    c[(a, b)] = v;
                    c[(b, a)] = v;
                }
                c[(b, b)] += state.sigma0[cells[b].1];
            }
            let chol = chol_psd(&c)?;
            let mut w = y.clone();
            chol.solve_lower_mut(&mut w);
            Ok(-0.5 * (chol.log_det() + w.norm_squared() + m as f64 * ln2pi))
        })
        .collect()
}

/// Picks a grid index with probability proportional to `weight * exp(loglik)`.
pub fn sample_grid_index<R: Rng + ?Sized>(logliks: &[f64], weights: Option<&[f64]>, rng: &mut R) -> Result<usize> {
    if logliks.is_empty() {
        return Err(argument("empty grid"));
    }
    let logw: Vec<f64> = logliks
        .iter()
        .enumerate()
        .map(|(g, l)| l + weights.map_or(0.0, |w| w[g].ln()))
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(CovRegError::Numerical("grid posterior has no finite mass".into()));
    }
    let probs: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (g, p) in probs.iter().enumerate() {
        if u < *p {
            return Ok(g);
        }
        u -= p;
    }
    Ok(probs.len() - 1)
}
