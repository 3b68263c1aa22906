//! Chain configuration, the sweep loop and the thinned posterior archive.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp_posterior::GpConditional;
use super::init::{data_driven_init, DataDrivenInit};
use super::kappa::{kappa_grid_logmarginal, kappa_heuristic_detailed, sample_grid_index, KappaHeuristicConfig, DEFAULT_MARGINAL_CAP};
use super::steps::{impute_missing, step_delta, step_eta, step_phi, step_psi_nu, step_sigma0, step_theta, step_xi, ObservedData};
use crate::error::{argument, CovRegError, Result};
use crate::gp_kernel::{gram_matrix, KernelParams};
use crate::model::{sample_prior, CovarianceTrajectory, Dataset, Hyperparameters, MeanMode, ModelState};

/// Version tag of [`PosteriorArchive`]; bumped on any layout change.
pub const ARCHIVE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Prior,
    DataDriven,
}

/// How the kernel length-scale is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum KappaPolicy {
    /// Use `Hyperparameters::kernel.kappa`.
    Fixed,
    /// Set once from the data before sampling. Values of at least 1 are
    /// rounded to the nearest integer.
    Heuristic { n_knots: usize, bin_halfwidth: Option<usize> },
    /// Redrawn every sweep from the grid posterior.
    Grid { values: Vec<f64>, weights: Option<Vec<f64>>, cap: usize },
}

impl KappaPolicy {
    pub fn grid(values: Vec<f64>) -> Self {
        KappaPolicy::Grid { values, weights: None, cap: DEFAULT_MARGINAL_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: InitScheme,
    pub mode: MeanMode,
    pub kappa_policy: KappaPolicy,
    /// Fill unobserved responses with a draw from their conditional each
    /// sweep instead of conditioning on observed entries only.
    pub impute_missing: bool,
    pub warmup_cycles: usize,
    pub init_knots: usize,
}

impl ChainConfig {
    /// 10,000 sweeps, first 5,000 discarded, every 10th kept.
    pub fn new(seed: u64) -> Self {
        Self {
            n_iterations: 10_000,
            burn_in: 5_000,
            thin: 10,
            seed,
            init: InitScheme::DataDriven,
            mode: MeanMode::LatentMean,
            kappa_policy: KappaPolicy::Fixed,
            impute_missing: false,
            warmup_cycles: 3,
            init_knots: 20,
        }
    }

    pub fn with_iterations(mut self, n_iterations: usize, burn_in: usize, thin: usize) -> Self {
        self.n_iterations = n_iterations;
        self.burn_in = burn_in;
        self.thin = thin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.thin == 0 {
            return Err(argument("n_iterations and thin must be positive"));
        }
        if self.burn_in >= self.n_iterations {
            return Err(argument(format!("burn_in {} must be below n_iterations {}", self.burn_in, self.n_iterations)));
        }
        if let KappaPolicy::Grid { values, weights, .. } = &self.kappa_policy {
            if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
                return Err(argument("kappa grid must be nonempty and positive"));
            }
            if let Some(w) = weights {
                if w.len() != values.len() || w.iter().any(|v| !(*v > 0.0)) {
                    return Err(argument("kappa grid weights must be positive, one per value"));
                }
            }
        }
        Ok(())
    }

    /// Number of draws kept: `floor((n_iterations - burn_in) / thin)`.
    pub fn retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }

    fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in) % self.thin == 0
    }
}

/// Thinned posterior draws of the covariance (and mean) trajectory plus
/// scalar traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorArchive {
    pub format_version: u32,
    /// Which model produced the draws.
    pub model: String,
    pub xs: Vec<Vec<f64>>,
    /// Sweep index (1-based) of each kept draw.
    pub iterations: Vec<usize>,
    pub draws: Vec<CovarianceTrajectory>,
    /// Scalar traces, one value per kept draw.
    pub traces: BTreeMap<String, Vec<f64>>,
    /// Length-scale in force at the end of the run (`None` for models without a kernel).
    pub kappa: Option<f64>,
    pub final_state: Option<ModelState>,
}

impl PosteriorArchive {
    pub fn new(model: &str, xs: Vec<Vec<f64>>) -> Self {
        Self {
            format_version: ARCHIVE_FORMAT_VERSION,
            model: model.to_string(),
            xs,
            iterations: Vec::new(),
            draws: Vec::new(),
            traces: BTreeMap::new(),
            kappa: None,
            final_state: None,
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn p(&self) -> usize {
        self.draws.first().map_or(0, |d| d.p())
    }

    pub fn push_trace(&mut self, name: &str, value: f64) {
        self.traces.entry(name.to_string()).or_default().push(value);
    }

    /// Draws of `Sigma(x_i)[a, b]`.
    pub fn element_samples(&self, i: usize, a: usize, b: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.sigmas[i][(a, b)]).collect()
    }

    /// Draws of `mu(x_i)[a]` (zero when the model has no mean).
    pub fn mean_samples(&self, i: usize, a: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.mean_at(i)[a]).collect()
    }

    /// Posterior mean of the trajectory.
    pub fn mean_trajectory(&self) -> Result<CovarianceTrajectory> {
        let first = self.draws.first().ok_or_else(|| argument("archive holds no draws"))?;
        let m = self.draws.len() as f64;
        let n = first.len();
        let p = first.p();
        let mut sigmas = vec![DMatrix::zeros(p, p); n];
        let mut mus = first.mus.as_ref().map(|_| vec![nalgebra::DVector::zeros(p); n]);
        for d in &self.draws {
            for i in 0..n {
                sigmas[i] += &d.sigmas[i] / m;
                if let (Some(acc), Some(src)) = (mus.as_mut(), d.mus.as_ref()) {
                    acc[i] += &src[i] / m;
                }
            }
        }
        Ok(CovarianceTrajectory { sigmas, mus })
    }
}

/// Wall-clock seconds spent in each part of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub seconds: BTreeMap<String, f64>,
}

impl StepTiming {
    fn add(&mut self, name: &str, since: Instant) {
        *self.seconds.entry(name.to_string()).or_default() += since.elapsed().as_secs_f64();
    }
}

/// Runs one chain; see [`run_chain_timed`].
pub fn run_chain(config: &ChainConfig, hyper: &Hyperparameters, data: &Dataset) -> Result<PosteriorArchive> {
    Ok(run_chain_timed(config, hyper, data)?.0)
}

fn numerical_context(step: &str, t: usize) -> impl FnOnce(CovRegError) -> CovRegError + '_ {
    move |e| match e {
        CovRegError::NotPositiveDefinite { .. } | CovRegError::Numerical(_) => {
            CovRegError::Numerical(format!("{step} failed at sweep {t}: {e}"))
        }
        other => other,
    }
}

/// Initializes and runs `n_iterations` sweeps in the order
/// `xi -> eta (or psi/nu) -> Sigma_0 -> Theta -> phi -> delta (-> kappa)`,
/// keeping every `thin`-th state after `burn_in`. Deterministic given the seed.
pub fn run_chain_timed(config: &ChainConfig, hyper: &Hyperparameters, data: &Dataset) -> Result<(PosteriorArchive, StepTiming)> {
    config.validate()?;
    hyper.validate()?;
    let mut timing = StepTiming::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hyper = *hyper;

    let started = Instant::now();
    let mut grid_index = None;
    match &config.kappa_policy {
        KappaPolicy::Fixed => {}
        KappaPolicy::Heuristic { n_knots, bin_halfwidth } => {
            let cfg = KappaHeuristicConfig { n_knots: *n_knots, bin_halfwidth: *bin_halfwidth, ..Default::default() };
            let est = kappa_heuristic_detailed(data, &cfg)?;
            let kappa = if est.kappa >= 1.0 { est.kappa.round() } else { est.kappa };
            log::info!("kappa heuristic: {:.4} -> {}", est.kappa, kappa);
            hyper.kernel = KernelParams::new(kappa, hyper.kernel.nugget)?;
        }
        KappaPolicy::Grid { values, .. } => {
            let idx = values.iter().position(|v| *v == hyper.kernel.kappa).unwrap_or(0);
            grid_index = Some(idx);
            hyper.kernel = KernelParams::new(values[idx], hyper.kernel.nugget)?;
        }
    }
    timing.add("kappa", started);

    let nugget = hyper.kernel.nugget;
    let build_gp = |kappa: f64| -> Result<GpConditional> {
        GpConditional::new(&gram_matrix(&data.xs, &KernelParams::new(kappa, nugget)?)?)
    };
    let mut gp_cache: Vec<Option<GpConditional>> = match &config.kappa_policy {
        KappaPolicy::Grid { values, .. } => vec![None; values.len()],
        _ => Vec::new(),
    };
    let mut gp = build_gp(hyper.kernel.kappa)?;

    let started = Instant::now();
    let mut state = match config.init {
        InitScheme::Prior => sample_prior(&hyper, &data.xs, data.p(), config.mode, &mut rng)?,
        InitScheme::DataDriven => {
            let cfg = DataDrivenInit { n_knots: config.init_knots, bin_halfwidth: None, warmup_cycles: config.warmup_cycles };
            data_driven_init(data, &hyper, config.mode, &gp, &cfg, &mut rng)?
        }
    };
    timing.add("init", started);

    let observed = ObservedData::new(data);
    let imputing = config.impute_missing && data.missing_count() > 0;
    let mut archive = PosteriorArchive::new("heteroscedastic", data.xs.clone());
    for t in 1..=config.n_iterations {
        let imputed;
        let view = if imputing {
            let s = Instant::now();
            imputed = impute_missing(&state, data, &mut rng)?;
            timing.add("impute", s);
            &imputed
        } else {
            &observed
        };

        let s = Instant::now();
        step_xi(&mut state, view, &gp, &mut rng).map_err(numerical_context("xi step", t))?;
        timing.add("xi", s);
        let s = Instant::now();
        match config.mode {
            MeanMode::ZeroMean => step_eta(&mut state, view, &mut rng).map_err(numerical_context("eta step", t))?,
            MeanMode::LatentMean => step_psi_nu(&mut state, view, &gp, &mut rng).map_err(numerical_context("psi/nu step", t))?,
        }
        timing.add("factors", s);
        let s = Instant::now();
        step_sigma0(&mut state, view, &hyper, &mut rng)?;
        step_theta(&mut state, view, &mut rng).map_err(numerical_context("theta step", t))?;
        step_phi(&mut state, &mut rng);
        step_delta(&mut state, &hyper, &mut rng);
        timing.add("loadings", s);

        if let KappaPolicy::Grid { values, weights, cap } = &config.kappa_policy {
            let s = Instant::now();
            let ll = kappa_grid_logmarginal(&state, view, &data.xs, values, hyper.kernel.nugget, *cap)?;
            let idx = sample_grid_index(&ll, weights.as_deref(), &mut rng)?;
            if Some(idx) != grid_index {
                let previous = grid_index.expect("grid policy sets an index");
                gp_cache[previous] = Some(std::mem::replace(&mut gp, match gp_cache[idx].take() {
                    Some(cached) => cached,
                    None => build_gp(values[idx])?,
                }));
                grid_index = Some(idx);
                hyper.kernel = KernelParams::new(values[idx], hyper.kernel.nugget)?;
            }
            timing.add("kappa", s);
        }

        if config.keeps(t) {
            archive.iterations.push(t);
            archive.draws.push(state.trajectory());
            for j in 0..state.p() {
                archive.push_trace(&format!("sigma0[{j}]"), state.sigma0[j]);
            }
            archive.push_trace("kappa", hyper.kernel.kappa);
            archive.push_trace("tau[0]", state.shrinkage.tau[0]);
        }
    }
    archive.kappa = Some(hyper.kernel.kappa);
    archive.final_state = Some(state);
    Ok((archive, timing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_from_prior_dataset, unit_grid};

    fn small_problem() -> (Hyperparameters, Dataset) {
        let gen = Hyperparameters::generating_defaults();
        let sim = simulate_from_prior_dataset(&gen, &unit_grid(30), 3, MeanMode::LatentMean, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (Hyperparameters { l_star: 4, k_star: 3, ..Hyperparameters::fitting_defaults() }, sim.dataset)
    }

    #[test]
    fn two_iterations_two_draws() {
        let (hyper, data) = small_problem();
        let mut cfg = ChainConfig::new(1).with_iterations(2, 0, 1);
        cfg.init = InitScheme::Prior;
        let a = run_chain(&cfg, &hyper, &data).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.iterations, vec![1, 2]);
        assert_eq!(a.traces["sigma0[0]"].len(), 2);
    }

    #[test]
    fn thinning_bookkeeping() {
        let (hyper, data) = small_problem();
        let cfg = ChainConfig::new(1).with_iterations(23, 5, 4);
        assert_eq!(cfg.retained(), 4);
        let a = run_chain(&cfg, &hyper, &data).unwrap();
        assert_eq!(a.iterations, vec![9, 13, 17, 21]);
    }

    #[test]
    fn identical_seeds_identical_archives() {
        let (hyper, data) = small_problem();
        let cfg = ChainConfig::new(77).with_iterations(6, 2, 2);
        assert_eq!(run_chain(&cfg, &hyper, &data).unwrap(), run_chain(&cfg, &hyper, &data).unwrap());
        let other = ChainConfig { seed: 78, ..cfg.clone() };
        assert_ne!(run_chain(&cfg, &hyper, &data).unwrap(), run_chain(&other, &hyper, &data).unwrap());
    }

    #[test]
    fn grid_policy_records_kappa() {
        let (hyper, data) = small_problem();
        let mut cfg = ChainConfig::new(3).with_iterations(4, 0, 1);
        cfg.kappa_policy = KappaPolicy::grid(vec![5.0, 10.0, 20.0]);
        let a = run_chain(&cfg, &hyper, &data).unwrap();
        assert!(a.traces["kappa"].iter().all(|k| [5.0, 10.0, 20.0].contains(k)));
    }

    #[test]
    fn rejects_bad_config() {
        let (hyper, data) = small_problem();
        let cfg = ChainConfig::new(1).with_iterations(5, 5, 1);
        assert!(run_chain(&cfg, &hyper, &data).is_err());
        let mut cfg = ChainConfig::new(1).with_iterations(5, 0, 1);
        cfg.kappa_policy = KappaPolicy::grid(vec![]);
        assert!(run_chain(&cfg, &hyper, &data).is_err());
    }
}
