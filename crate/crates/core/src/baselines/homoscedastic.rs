//! Homoscedastic comparison models: responses share one covariance `Sigma`
//! for every predictor, with an inverse-Wishart prior.
//!
//! Two mean structures are offered: independent Gaussian-process means per
//! component, and the latent-factor mean `Theta xi(x) psi(x)` of the main
//! model. Mean blocks condition on observed cells through the per-row
//! precision `(Sigma_oo)^{-1}`; the `Sigma` update completes unobserved
//! residuals with a conditional draw first.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::conditional_predictive;
use crate::distributions::sample_inverse_wishart;
use crate::error::{argument, CovRegError, Result};
use crate::gibbs::{data_driven_init, step_delta, step_phi, ChainConfig, DataDrivenInit, GpConditional, InitScheme, ObservedData, PosteriorArchive};
use crate::gp_kernel::{gram_matrix, KernelParams};
use crate::linalg::{chol_psd, sample_canonical, submatrix};
use crate::model::{sample_gaussian, sample_prior, CovarianceTrajectory, Dataset, Hyperparameters, MeanMode, ModelState};

/// How the constant covariance is treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaModel {
    /// `Sigma ~ IW(df, scale)`, redrawn each sweep.
    InverseWishart { df: f64, scale: DMatrix<f64> },
    /// Held at the given matrix.
    Fixed(DMatrix<f64>),
}

impl SigmaModel {
    /// `IW(p + 2, I)`: finite prior mean `I`.
    pub fn weakly_informative(p: usize) -> Self {
        SigmaModel::InverseWishart { df: p as f64 + 2.0, scale: DMatrix::identity(p, p) }
    }

    fn validate(&self, p: usize) -> Result<()> {
        let m = match self {
            SigmaModel::InverseWishart { df, scale } => {
                if !(*df > p as f64 + 1.0) {
                    return Err(argument(format!("inverse-Wishart degrees {df} must exceed p + 1 = {}", p + 1)));
                }
                scale
            }
            SigmaModel::Fixed(m) => m,
        };
        if m.nrows() != p || m.ncols() != p {
            return Err(argument("covariance prior does not match p"));
        }
        chol_psd(m)?;
        Ok(())
    }

    fn initial(&self) -> DMatrix<f64> {
        match self {
            SigmaModel::InverseWishart { df, scale } => scale / (df - scale.nrows() as f64 - 1.0),
            SigmaModel::Fixed(m) => m.clone(),
        }
    }
}

/// Mean parameters of a homoscedastic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HomoscedasticMean {
    /// `n x p` values of the component GP means at the predictors.
    GpMean(DMatrix<f64>),
    /// `Theta`, `xi`, `psi` and shrinkage; `mean_at` gives `Theta xi(x_i) psi(x_i)`.
    LatentFactor(ModelState),
}

/// Current state of a homoscedastic sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoscedasticFit {
    pub mean: HomoscedasticMean,
    pub sigma: DMatrix<f64>,
    pub sigma_model: SigmaModel,
}

impl HomoscedasticFit {
    /// `n x p` matrix of fitted means.
    pub fn means(&self) -> DMatrix<f64> {
        match &self.mean {
            HomoscedasticMean::GpMean(mu) => mu.clone(),
            HomoscedasticMean::LatentFactor(state) => {
                let mut out = DMatrix::zeros(state.n(), state.p());
                for i in 0..state.n() {
                    out.row_mut(i).copy_from(&state.mean_at(i).transpose());
                }
                out
            }
        }
    }

    pub fn trajectory(&self) -> CovarianceTrajectory {
        let means = self.means();
        let n = means.nrows();
        CovarianceTrajectory {
            sigmas: vec![self.sigma.clone(); n],
            mus: Some((0..n).map(|i| means.row(i).transpose()).collect()),
        }
    }
}

/// `(Sigma_oo)^{-1}` of each row embedded in a `p x p` matrix (zero on unobserved components).
pub fn row_precisions(sigma: &DMatrix<f64>, data: &ObservedData) -> Result<Vec<DMatrix<f64>>> {
    let p = data.p();
    let full = chol_psd(sigma)?.inverse();
    let all: Vec<usize> = (0..p).collect();
    (0..data.n())
        .map(|i| {
            let obs = data.observed_in_row(i);
            if obs == all.as_slice() {
                return Ok(full.clone());
            }
            let mut out = DMatrix::zeros(p, p);
            if !obs.is_empty() {
                let inv = chol_psd(&submatrix(sigma, obs, obs))?.inverse();
                for (a, &ja) in obs.iter().enumerate() {
                    for (b, &jb) in obs.iter().enumerate() {
                        out[(ja, jb)] = inv[(a, b)];
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Responses with unobserved cells drawn from `N(mu_i, Sigma)` given the observed cells.
pub fn complete_responses<R: Rng + ?Sized>(
    data: &Dataset,
    means: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::from_fn(data.n(), data.p(), |i, j| if data.observed[(i, j)] { data.y[(i, j)] } else { 0.0 });
    for i in 0..data.n() {
        let missing = data.missing_in_row(i);
        if missing.is_empty() {
            continue;
        }
        let obs = data.observed_in_row(i);
        let vals = DVector::from_iterator(obs.len(), obs.iter().map(|&j| data.y[(i, j)]));
        let pred = conditional_predictive(&means.row(i).transpose(), sigma, &obs, &vals)?;
        let draw = sample_gaussian(&pred.mean, &pred.covariance, rng)?;
        for (r, &j) in pred.index_map.iter().enumerate() {
            y[(i, j)] = draw[r];
        }
    }
    Ok(y)
}

/// Parameters `(df, scale)` of the `Sigma` conditional given complete residuals: `(df_0 + n, S_0 + R'R)`.
pub fn sigma_conditional(df: f64, scale: &DMatrix<f64>, residuals: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    (df + residuals.nrows() as f64, scale + residuals.tr_mul(residuals))
}

/// Parameters `(d, b)` of the conditional of component `j` of the GP mean.
pub fn gp_mean_conditional(
    means: &DMatrix<f64>,
    data: &ObservedData,
    precisions: &[DMatrix<f64>],
    j: usize,
) -> (DVector<f64>, DVector<f64>) {
    let n = data.n();
    let mut d = DVector::zeros(n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let pr = &precisions[i];
        d[i] = pr[(j, j)];
        let mut v = 0.0;
        for c in 0..data.p() {
            v += pr[(j, c)] * (data.y[(i, c)] - means[(i, c)]);
        }
        b[i] = v + pr[(j, j)] * means[(i, j)];
    }
    (d, b)
}

fn step_gp_means<R: Rng + ?Sized>(
    means: &mut DMatrix<f64>,
    data: &ObservedData,
    precisions: &[DMatrix<f64>],
    gp: &GpConditional,
    rng: &mut R,
) -> Result<()> {
    for j in 0..data.p() {
        let (d, b) = gp_mean_conditional(means, data, precisions, j);
        let draw = gp.sample(&d, &b, rng)?;
        means.set_column(j, &draw);
    }
    Ok(())
}

fn residual_rows(state: &ModelState, data: &ObservedData) -> Vec<DVector<f64>> {
    (0..data.n()).map(|i| data.y.row(i).transpose() - state.mean_at(i)).collect()
}

fn step_factor_dictionary<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ObservedData,
    precisions: &[DMatrix<f64>],
    gp: &GpConditional,
    rng: &mut R,
) -> Result<()> {
    let n = data.n();
    let mut resid = residual_rows(state, data);
    for l in 0..state.l_star() {
        let theta_l = state.theta.column(l).into_owned();
        let u: Vec<DVector<f64>> = precisions.iter().map(|pr| pr * &theta_l).collect();
        let s: Vec<f64> = u.iter().map(|v| v.dot(&theta_l)).collect();
        for m in 0..state.k_star() {
            let mut d = DVector::zeros(n);
            let mut b = DVector::zeros(n);
            for i in 0..n {
                let psi = state.psi[(m, i)];
                d[i] = psi * psi * s[i];
                b[i] = psi * (u[i].dot(&resid[i]) + s[i] * state.xi[i][(l, m)] * psi);
            }
            let draw = gp.sample(&d, &b, rng)?;
            for i in 0..n {
                let change = draw[i] - state.xi[i][(l, m)];
                state.xi[i][(l, m)] = draw[i];
                resid[i].axpy(-change * state.psi[(m, i)], &theta_l, 1.0);
            }
        }
    }
    Ok(())
}

fn step_factor_means<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &ObservedData,
    precisions: &[DMatrix<f64>],
    gp: &GpConditional,
    rng: &mut R,
) -> Result<()> {
    let n = data.n();
    let mut resid = residual_rows(state, data);
    let loadings: Vec<DMatrix<f64>> = (0..n).map(|i| state.loadings(i)).collect();
    for m in 0..state.k_star() {
        let mut d = DVector::zeros(n);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            let a = loadings[i].column(m);
            let w = &precisions[i] * a;
            d[i] = w.dot(&a);
            b[i] = w.dot(&resid[i]) + d[i] * state.psi[(m, i)];
        }
        let draw = gp.sample(&d, &b, rng)?;
        for i in 0..n {
            let change = draw[i] - state.psi[(m, i)];
            state.psi[(m, i)] = draw[i];
            resid[i].axpy(-change, &loadings[i].column(m), 1.0);
        }
    }
    state.eta.copy_from(&state.psi);
    Ok(())
}

/// Parameters `(precision, b)` of the joint conditional of `Theta` in
/// row-major order (`j * L + l`) for the latent-factor mean.
pub fn factor_theta_conditional(
    state: &ModelState,
    data: &ObservedData,
    precisions: &[DMatrix<f64>],
) -> (DMatrix<f64>, DVector<f64>) {
    let (p, l) = (state.p(), state.l_star());
    let prior = state.shrinkage.loading_variances();
    let mut q = DMatrix::zeros(p * l, p * l);
    let mut b = DVector::zeros(p * l);
    for j in 0..p {
        for h in 0..l {
            q[(j * l + h, j * l + h)] = 1.0 / prior[(j, h)];
        }
    }
    for i in 0..data.n() {
        let g = &state.xi[i] * state.psi.column(i);
        let gg = &g * g.transpose();
        let pr = &precisions[i];
        let py = pr * data.y.row(i).transpose();
        for j in 0..p {
            for h in 0..l {
                b[j * l + h] += py[j] * g[h];
            }
            for jj in 0..p {
                let w = pr[(j, jj)];
                if w != 0.0 {
                    let mut block = q.view_mut((j * l, jj * l), (l, l));
                    block += &gg * w;
                }
            }
        }
    }
    (q, b)
}

fn step_factor_theta<R: Rng + ?Sized>(state: &mut ModelState, data: &ObservedData, precisions: &[DMatrix<f64>], rng: &mut R) -> Result<()> {
    let (q, b) = factor_theta_conditional(state, data, precisions);
    let draw = sample_canonical(&q, &b, rng)?.0;
    let l = state.l_star();
    for j in 0..state.p() {
        for h in 0..l {
            state.theta[(j, h)] = draw[j * l + h];
        }
    }
    Ok(())
}

enum MeanSampler<'a> {
    Gp,
    Factor(&'a Hyperparameters),
}

fn numerical(step: &'static str, t: usize) -> impl FnOnce(CovRegError) -> CovRegError {
    move |e| match e {
        CovRegError::NotPositiveDefinite { .. } | CovRegError::Numerical(_) => {
            CovRegError::Numerical(format!("{step} failed at sweep {t}: {e}"))
        }
        other => other,
    }
}

fn run_homoscedastic(
    sampler: MeanSampler<'_>,
    kernel: &KernelParams,
    sigma_model: &SigmaModel,
    config: &ChainConfig,
    data: &Dataset,
) -> Result<(PosteriorArchive, HomoscedasticFit)> {
    config.validate()?;
    let (n, p) = (data.n(), data.p());
    sigma_model.validate(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gp = GpConditional::new(&gram_matrix(&data.xs, kernel)?)?;

    let (model, mean) = match &sampler {
        MeanSampler::Gp => ("homoscedastic-gp-mean", HomoscedasticMean::GpMean(DMatrix::zeros(n, p))),
        MeanSampler::Factor(hyper) => {
            hyper.validate()?;
            let mut state = match config.init {
                InitScheme::Prior => sample_prior(hyper, &data.xs, p, MeanMode::LatentMean, &mut rng)?,
                InitScheme::DataDriven => {
                    let cfg = DataDrivenInit { n_knots: config.init_knots, bin_halfwidth: None, warmup_cycles: config.warmup_cycles };
                    data_driven_init(data, hyper, MeanMode::LatentMean, &gp, &cfg, &mut rng)?
                }
            };
            state.nu.fill(0.0);
            state.eta.copy_from(&state.psi);
            ("homoscedastic-latent-factor", HomoscedasticMean::LatentFactor(state))
        }
    };
    let mut fit = HomoscedasticFit { mean, sigma: sigma_model.initial(), sigma_model: sigma_model.clone() };

    let observed = ObservedData::new(data);
    let incomplete = data.missing_count() > 0;
    let mut archive = PosteriorArchive::new(model, data.xs.clone());
    for t in 1..=config.n_iterations {
        let imputed;
        let view = if config.impute_missing && incomplete {
            imputed = ObservedData::completed(complete_responses(data, &fit.means(), &fit.sigma, &mut rng)?);
            &imputed
        } else {
            &observed
        };
        let precisions = row_precisions(&fit.sigma, view).map_err(numerical("row precision", t))?;
        match (&mut fit.mean, &sampler) {
            (HomoscedasticMean::GpMean(mu), _) => {
                step_gp_means(mu, view, &precisions, &gp, &mut rng).map_err(numerical("GP mean step", t))?
            }
            (HomoscedasticMean::LatentFactor(state), MeanSampler::Factor(hyper)) => {
                step_factor_dictionary(state, view, &precisions, &gp, &mut rng).map_err(numerical("dictionary step", t))?;
                step_factor_means(state, view, &precisions, &gp, &mut rng).map_err(numerical("factor mean step", t))?;
                step_factor_theta(state, view, &precisions, &mut rng).map_err(numerical("loadings step", t))?;
                step_phi(state, &mut rng);
                step_delta(state, hyper, &mut rng);
            }
            _ => unreachable!("mean parameters follow the sampler"),
        }

        if let SigmaModel::InverseWishart { df, scale } = &fit.sigma_model {
            let means = fit.means();
            let y = if view.observed_in_column(0) == n && (0..p).all(|j| view.observed_in_column(j) == n) {
                view.y.clone()
            } else {
                complete_responses(data, &means, &fit.sigma, &mut rng)?
            };
            let (df_post, scale_post) = sigma_conditional(*df, scale, &(y - means));
            fit.sigma = sample_inverse_wishart(df_post, &scale_post, &mut rng).map_err(numerical("covariance step", t))?;
        }
        if let HomoscedasticMean::LatentFactor(state) = &mut fit.mean {
            state.sigma0 = fit.sigma.diagonal();
        }

        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            archive.iterations.push(t);
            archive.draws.push(fit.trajectory());
            for j in 0..p {
                archive.push_trace(&format!("sigma[{j}]"), fit.sigma[(j, j)]);
            }
            if let HomoscedasticMean::LatentFactor(state) = &fit.mean {
                archive.push_trace("tau[0]", state.shrinkage.tau[0]);
            }
        }
    }
    archive.kappa = Some(kernel.kappa);
    Ok((archive, fit))
}

/// Component-wise GP mean regression with a constant covariance.
pub fn fit_homoscedastic_gp_mean(
    data: &Dataset,
    kernel: &KernelParams,
    sigma_model: &SigmaModel,
    config: &ChainConfig,
) -> Result<PosteriorArchive> {
    Ok(fit_homoscedastic_gp_mean_state(data, kernel, sigma_model, config)?.0)
}

/// As [`fit_homoscedastic_gp_mean`], also returning the final state.
pub fn fit_homoscedastic_gp_mean_state(
    data: &Dataset,
    kernel: &KernelParams,
    sigma_model: &SigmaModel,
    config: &ChainConfig,
) -> Result<(PosteriorArchive, HomoscedasticFit)> {
    run_homoscedastic(MeanSampler::Gp, kernel, sigma_model, config, data)
}

/// Latent-factor mean `Theta xi(x) psi(x)` (priors as in the main model)
/// with a constant covariance.
pub fn fit_homoscedastic_latent_factor(
    data: &Dataset,
    hyper: &Hyperparameters,
    sigma_model: &SigmaModel,
    config: &ChainConfig,
) -> Result<PosteriorArchive> {
    Ok(fit_homoscedastic_latent_factor_state(data, hyper, sigma_model, config)?.0)
}

/// As [`fit_homoscedastic_latent_factor`], also returning the final state.
pub fn fit_homoscedastic_latent_factor_state(
    data: &Dataset,
    hyper: &Hyperparameters,
    sigma_model: &SigmaModel,
    config: &ChainConfig,
) -> Result<(PosteriorArchive, HomoscedasticFit)> {
    run_homoscedastic(MeanSampler::Factor(hyper), &hyper.kernel, sigma_model, config, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::unit_grid;
    use approx::assert_relative_eq;

    fn noisy_curve(n: usize, noise: f64, seed: u64) -> (Dataset, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = unit_grid(n);
        let truth = DMatrix::from_fn(n, 2, |i, j| (3.0 * xs[i][0] + j as f64).sin());
        let y = DMatrix::from_fn(n, 2, |i, j| truth[(i, j)] + noise * crate::distributions::sample_standard_normal(&mut rng));
        (Dataset::complete(xs, y).unwrap(), truth)
    }

    #[test]
    fn sigma_update_arithmetic() {
        let r = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let (df, scale) = sigma_conditional(4.0, &DMatrix::identity(2, 2), &r);
        assert_eq!(df, 7.0);
        assert_eq!(scale, DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 6.0]));
    }

    #[test]
    fn row_precisions_embed_observed_block() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.5]);
        let mut hide = DMatrix::from_element(2, 3, false);
        hide[(1, 1)] = true;
        let data = Dataset::complete(unit_grid(2), DMatrix::from_element(2, 3, 1.0)).unwrap().with_hidden(&hide).unwrap();
        let pr = row_precisions(&sigma, &ObservedData::new(&data)).unwrap();
        assert_relative_eq!(&pr[0] * &sigma, DMatrix::identity(3, 3), epsilon = 1e-12);
        assert_eq!(pr[1].row(1).amax(), 0.0);
        let block = submatrix(&sigma, &[0, 2], &[0, 2]).try_inverse().unwrap();
        assert_relative_eq!(pr[1][(0, 2)], block[(0, 1)], epsilon = 1e-12);
    }

    #[test]
    fn gp_mean_tracks_curve() {
        let (data, truth) = noisy_curve(40, 0.0, 1);
        let cfg = ChainConfig::new(3).with_iterations(300, 100, 2);
        let kernel = KernelParams::with_kappa(10.0).unwrap();
        let sigma = SigmaModel::Fixed(DMatrix::identity(2, 2) * 1e-3);
        let archive = fit_homoscedastic_gp_mean(&data, &kernel, &sigma, &cfg).unwrap();
        for i in 0..40 {
            for j in 0..2 {
                let s = archive.mean_samples(i, j);
                let m = s.iter().sum::<f64>() / s.len() as f64;
                let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
                assert!((m - truth[(i, j)]).abs() < 3.0 * sd + 1e-6, "({i},{j}) mean {m} truth {} sd {sd}", truth[(i, j)]);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (data, _) = noisy_curve(15, 0.3, 2);
        let cfg = ChainConfig::new(5).with_iterations(20, 10, 2);
        let kernel = KernelParams::with_kappa(10.0).unwrap();
        let sigma = SigmaModel::weakly_informative(2);
        let a = fit_homoscedastic_gp_mean(&data, &kernel, &sigma, &cfg).unwrap();
        let b = fit_homoscedastic_gp_mean(&data, &kernel, &sigma, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let hyper = Hyperparameters { l_star: 3, k_star: 2, ..Hyperparameters::fitting_defaults() };
        let c = fit_homoscedastic_latent_factor(&data, &hyper, &sigma, &cfg).unwrap();
        let d = fit_homoscedastic_latent_factor(&data, &hyper, &sigma, &cfg).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.iterations, vec![12, 14, 16, 18, 20]);
        assert!(c.draws.iter().all(|t| t.sigmas.windows(2).all(|w| w[0] == w[1])));
    }

    #[test]
    fn missing_cells_with_and_without_imputation() {
        let (full, _) = noisy_curve(20, 0.3, 4);
        let mut hide = DMatrix::from_element(20, 2, false);
        hide[(3, 0)] = true;
        hide[(7, 1)] = true;
        hide[(9, 0)] = true;
        hide[(9, 1)] = true;
        let data = full.with_hidden(&hide).unwrap();
        let hyper = Hyperparameters { l_star: 3, k_star: 2, ..Hyperparameters::fitting_defaults() };
        for impute in [false, true] {
            let mut cfg = ChainConfig::new(1).with_iterations(30, 10, 5);
            cfg.impute_missing = impute;
            cfg.init = InitScheme::Prior;
            let a = fit_homoscedastic_latent_factor(&data, &hyper, &SigmaModel::weakly_informative(2), &cfg).unwrap();
            assert_eq!(a.len(), 4);
            let b = fit_homoscedastic_gp_mean(&data, &hyper.kernel, &SigmaModel::weakly_informative(2), &cfg).unwrap();
            assert!(b.draws.iter().all(|t| chol_psd(&t.sigmas[0]).is_ok()));
        }
    }

    #[test]
    fn completion_keeps_observed_cells() {
        let (full, _) = noisy_curve(5, 0.3, 6);
        let mut hide = DMatrix::from_element(5, 2, false);
        hide[(2, 1)] = true;
        let data = full.with_hidden(&hide).unwrap();
        let y = complete_responses(&data, &DMatrix::zeros(5, 2), &DMatrix::identity(2, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..5 {
            for j in 0..2 {
                if data.observed[(i, j)] {
                    assert_eq!(y[(i, j)], data.y[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_prior() {
        let (data, _) = noisy_curve(10, 0.3, 7);
        let cfg = ChainConfig::new(1).with_iterations(4, 1, 1);
        let bad = SigmaModel::InverseWishart { df: 2.5, scale: DMatrix::identity(2, 2) };
        assert!(fit_homoscedastic_gp_mean(&data, &KernelParams::with_kappa(10.0).unwrap(), &bad, &cfg).is_err());
    }
}
