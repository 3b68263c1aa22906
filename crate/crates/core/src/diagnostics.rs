//! Scoring and convergence checks: Gaussian conditional predictives, KL
//! divergence, Frobenius error curves, HPD intervals and the Gelman-Rubin
//! potential scale reduction factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{argument, CovRegError, Result};
use crate::gibbs::PosteriorArchive;
use crate::linalg::{chol_psd, submatrix, subvector};
use crate::model::{CovarianceTrajectory, Dataset};

/// Gaussian law of a subset of response components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Response component of each coordinate.
    pub index_map: Vec<usize>,
}

impl GaussianPredictive {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Law of the components not in `observed_idx` given their observed values:
/// mean `mu_m + S_mo S_oo^{-1} (y_o - mu_o)`, covariance `S_mm - S_mo S_oo^{-1} S_om`.
pub fn conditional_predictive(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<GaussianPredictive> {
    let p = mu.len();
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(argument("covariance does not match the mean length"));
    }
    if observed_vals.len() != observed_idx.len() {
        return Err(argument("one observed value per observed index"));
    }
    let mut seen = vec![false; p];
    for &j in observed_idx {
        if j >= p || seen[j] {
            return Err(argument(format!("observed index {j} is out of range or repeated")));
        }
        seen[j] = true;
    }
    let missing: Vec<usize> = (0..p).filter(|j| !seen[*j]).collect();
    let mut mean = subvector(mu, &missing);
    let mut covariance = submatrix(sigma, &missing, &missing);
    if !observed_idx.is_empty() && !missing.is_empty() {
        let chol = chol_psd(&submatrix(sigma, observed_idx, observed_idx))
            .map_err(|e| CovRegError::Numerical(format!("observed block is singular: {e}")))?;
        if chol.jitter > 0.0 {
            return Err(CovRegError::Numerical("observed block is singular".into()));
        }
        let s_om = submatrix(sigma, &missing, observed_idx);
        let gain = chol.solve_matrix(&s_om.transpose()).transpose();
        mean += &gain * (observed_vals - subvector(mu, observed_idx));
        covariance -= &gain * s_om.transpose();
        crate::linalg::symmetrize(&mut covariance);
    }
    Ok(GaussianPredictive { mean, covariance, index_map: missing })
}

/// `KL(p || q)` between two Gaussians over the same components.
pub fn gaussian_kl(p: &GaussianPredictive, q: &GaussianPredictive) -> Result<f64> {
    if p.index_map != q.index_map || p.dim() != q.dim() || p.covariance.nrows() != p.dim() || q.covariance.nrows() != q.dim() {
        return Err(argument("predictives cover different components"));
    }
    let d = p.dim();
    if d == 0 {
        return Ok(0.0);
    }
    let cq = chol_psd(&q.covariance)?;
    let cp = chol_psd(&p.covariance)?;
    let trace = cq.solve_matrix(&p.covariance).trace();
    let diff = &q.mean - &p.mean;
    let quad = diff.dot(&cq.solve(&diff));
    let kl = 0.5 * (trace + quad - d as f64 + cq.log_det() - cp.log_det());
    Ok(kl.max(0.0))
}

/// `||estimate(x_i) - truth(x_i)||_F` at every grid point.
pub fn frobenius_error(estimate: &CovarianceTrajectory, truth: &CovarianceTrajectory) -> Result<Vec<f64>> {
    if estimate.len() != truth.len() || estimate.p() != truth.p() {
        return Err(argument("trajectories are on different grids"));
    }
    Ok(estimate.sigmas.iter().zip(&truth.sigmas).map(|(a, b)| (a - b).norm()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
}

impl IntervalSummary {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Smallest number of samples accepted by the interval estimators.
pub const MIN_INTERVAL_SAMPLES: usize = 20;

fn sorted_samples(samples: &[f64], mass: f64) -> Result<Vec<f64>> {
    if samples.len() < MIN_INTERVAL_SAMPLES {
        return Err(argument(format!("need at least {MIN_INTERVAL_SAMPLES} samples, got {}", samples.len())));
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(argument(format!("interval mass must be in (0, 1), got {mass}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(argument("samples must be finite"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Narrowest window of `ceil(mass * M)` consecutive order statistics.
pub fn hpd_interval(samples: &[f64], mass: f64) -> Result<IntervalSummary> {
    let s = sorted_samples(samples, mass)?;
    Ok(hpd_sorted(&s, mass))
}

fn hpd_sorted(s: &[f64], mass: f64) -> IntervalSummary {
    let m = s.len();
    let count = ((mass * m as f64).ceil() as usize).clamp(1, m);
    let mut best = 0;
    for start in 1..=m - count {
        if s[start + count - 1] - s[start] < s[best + count - 1] - s[best] {
            best = start;
        }
    }
    IntervalSummary { lower: s[best], upper: s[best + count - 1], mass }
}

/// Equal-tails interval over the same `ceil(mass * M)` order statistics.
pub fn equal_tails_interval(samples: &[f64], mass: f64) -> Result<IntervalSummary> {
    let s = sorted_samples(samples, mass)?;
    let m = s.len();
    let count = ((mass * m as f64).ceil() as usize).clamp(1, m);
    let start = (m - count) / 2;
    Ok(IntervalSummary { lower: s[start], upper: s[start + count - 1], mass })
}

/// Gelman-Rubin `R^{1/2}` from between- and within-chain variances,
/// `R = (n - 1)/n + B / (n W)`, floored at 1. Zero within-chain variance
/// gives 1 when the chain means agree and infinity otherwise.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(argument("psrf needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(argument("chains must share a length of at least 10"));
    }
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1) as f64;
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    let scale = grand.abs().max(means.iter().fold(0.0_f64, |a, v| a.max(v.abs()))).max(1.0);
    if w <= 1e-24 * scale * scale {
        return Ok(if b_over_n <= 1e-24 * scale * scale { 1.0 } else { f64::INFINITY });
    }
    let r = (n - 1) as f64 / n as f64 + b_over_n / w;
    Ok(r.max(1.0).sqrt())
}

/// Held-out mask for the predictive comparison: each cell of row `i` is
/// hidden with probability `0.03 + 0.04 (1 - ||Sigma(x_i)||_F / max_i ||Sigma(x_i)||_F)`,
/// so rows with small covariance lose more entries.
pub fn biased_holdout_mask<R: Rng + ?Sized>(truth: &CovarianceTrajectory, rng: &mut R) -> Result<DMatrix<bool>> {
    if truth.is_empty() {
        return Err(argument("empty truth trajectory"));
    }
    let norms: Vec<f64> = truth.sigmas.iter().map(|s| s.norm()).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(argument("truth covariances are all zero"));
    }
    let p = truth.p();
    let mut mask = DMatrix::from_element(truth.len(), p, false);
    for (i, norm) in norms.iter().enumerate() {
        let prob = 0.03 + 0.04 * (1.0 - norm / max);
        for j in 0..p {
            mask[(i, j)] = rng.random::<f64>() < prob;
        }
    }
    Ok(mask)
}

/// Average of `KL(P_{i,m} || Q_i)` over rows with held-out cells and over
/// posterior draws, for each archive. `P_{i,m}` is the draw's predictive of
/// the held-out cells given the observed cells of `data`; `Q_i` is the same
/// predictive under the truth.
pub fn predictive_kl_study(
    archives: &[&PosteriorArchive],
    data: &Dataset,
    held_out: &DMatrix<bool>,
    truth: &CovarianceTrajectory,
) -> Result<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    if held_out.shape() != (n, p) || truth.len() != n || truth.p() != p {
        return Err(argument("mask, data and truth dimensions differ"));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| (0..p).any(|j| held_out[(i, j)])).collect();
    if rows.is_empty() {
        return Err(argument("no held-out entries"));
    }
    let mut references = Vec::with_capacity(rows.len());
    for &i in &rows {
        if (0..p).any(|j| held_out[(i, j)] && data.observed[(i, j)]) {
            return Err(argument(format!("held-out cell in row {i} is still observed")));
        }
        let (idx, vals, targets) = row_pattern(data, held_out, i);
        let q = conditional_predictive(&truth.mean_at(i), &truth.sigmas[i], &idx, &vals)?;
        references.push((idx, vals, targets, q));
    }
    archives
        .iter()
        .map(|archive| {
            if archive.is_empty() {
                return Err(argument(format!("archive '{}' holds no draws", archive.model)));
            }
            if archive.draws[0].len() != n || archive.p() != p {
                return Err(argument(format!("archive '{}' does not match the data", archive.model)));
            }
            let mut total = 0.0;
            for (&i, (idx, vals, targets, q)) in rows.iter().zip(&references) {
                for draw in &archive.draws {
                    let full = conditional_predictive(&draw.mean_at(i), &draw.sigmas[i], idx, vals)?;
                    total += gaussian_kl(&restrict(&full, targets), &restrict(q, targets))?;
                }
            }
            Ok(total / (rows.len() * archive.len()) as f64)
        })
        .collect()
}

fn row_pattern(data: &Dataset, held_out: &DMatrix<bool>, i: usize) -> (Vec<usize>, DVector<f64>, Vec<usize>) {
    let idx = data.observed_in_row(i);
    let vals = DVector::from_iterator(idx.len(), idx.iter().map(|&j| data.y[(i, j)]));
    let targets = (0..data.p()).filter(|&j| held_out[(i, j)]).collect();
    (idx, vals, targets)
}

/// Marginal of a predictive on a subset of its components.
fn restrict(pred: &GaussianPredictive, components: &[usize]) -> GaussianPredictive {
    let pos: Vec<usize> = components.iter().map(|c| pred.index_map.iter().position(|v| v == c).expect("component present")).collect();
    GaussianPredictive {
        mean: subvector(&pred.mean, &pos),
        covariance: submatrix(&pred.covariance, &pos, &pos),
        index_map: components.to_vec(),
    }
}

/// Posterior mean and HPD band of one covariance element at one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementBand {
    pub point: usize,
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub interval: IntervalSummary,
}

/// Bands for every element `row <= col` at every predictor, ordered by
/// `(row, col, point)`.
pub fn element_bands(archive: &PosteriorArchive, mass: f64) -> Result<Vec<ElementBand>> {
    let p = archive.p();
    let n = archive.draws.first().map_or(0, |d| d.len());
    let mut out = Vec::with_capacity(n * p * (p + 1) / 2);
    for row in 0..p {
        for col in row..p {
            for point in 0..n {
                let s = archive.element_samples(point, row, col);
                let mean = s.iter().sum::<f64>() / s.len() as f64;
                out.push(ElementBand { point, row, col, mean, interval: hpd_interval(&s, mass)? });
            }
        }
    }
    Ok(out)
}

/// Fraction of `(element, predictor)` pairs whose true value lies inside the HPD band.
pub fn hpd_coverage(archive: &PosteriorArchive, truth: &CovarianceTrajectory, mass: f64) -> Result<f64> {
    let n = archive.draws.first().map_or(0, |d| d.len());
    if truth.len() != n || truth.p() != archive.p() {
        return Err(argument("archive and truth are on different grids"));
    }
    let bands = element_bands(archive, mass)?;
    let hits = bands.iter().filter(|b| b.interval.contains(truth.sigmas[b.point][(b.row, b.col)])).count();
    Ok(hits as f64 / bands.len() as f64)
}

/// `R^{1/2}` of every trace name present in all archives.
pub fn trace_psrf(archives: &[&PosteriorArchive]) -> Result<Vec<(String, f64)>> {
    let first = archives.first().ok_or_else(|| argument("no archives"))?;
    first
        .traces
        .keys()
        .filter(|name| archives.iter().all(|a| a.traces.contains_key(*name)))
        .map(|name| {
            let chains: Vec<Vec<f64>> = archives.iter().map(|a| a.traces[name].clone()).collect();
            Ok((name.clone(), psrf(&chains)?))
        })
        .collect()
}
