//! Subcommand drivers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use covreg::baselines::{
    fit_homoscedastic_gp_mean, fit_homoscedastic_latent_factor, fit_matrix_discounting, steady_state_beta, SigmaModel,
};
use covreg::diagnostics::{
    biased_holdout_mask, conditional_predictive, element_bands, frobenius_error, hpd_coverage, hpd_interval,
    predictive_kl_study, psrf, IntervalSummary, MIN_INTERVAL_SAMPLES,
};
use covreg::gibbs::{kappa_heuristic_detailed, run_chain_timed, ChainConfig, InitScheme, KappaHeuristicConfig, KappaPolicy, PosteriorArchive};
use covreg::gp_kernel::{rescale_unit_interval, KernelParams};
use covreg::model::{sample_dataset_from_trajectory, simulate_from_prior_dataset, simulate_spline_covariance, unit_grid};
use covreg::{CovarianceTrajectory, Dataset, Hyperparameters, MeanMode};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cli::*;
use crate::error::{CliError, CliResult};
use crate::io::{
    chain_path, load_archive, load_table, load_truth, save_archive, save_report, save_sidecar, save_table, save_truth,
};
use crate::manifest::RunManifest;

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("simulate");
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (preset, n0, p0) = match args.preset {
        Preset::PriorDraw => ("prior-draw", 100, 10),
        Preset::SplineKnots => ("spline-knots", 500, 30),
    };
    let (n, p) = (args.n.unwrap_or(n0), args.p.unwrap_or(p0));
    manifest.set("preset", preset);
    manifest.set("seed", args.seed);
    manifest.set("n", n);
    manifest.set("p", p);
    let (mut dataset, truth) = match args.preset {
        Preset::PriorDraw => {
            let gen = Hyperparameters::generating_defaults();
            manifest.set("generating_hyperparameters", format!("{gen:?}"));
            let sim = simulate_from_prior_dataset(&gen, &unit_grid(n), p, MeanMode::LatentMean, &mut rng)?;
            (sim.dataset, sim.truth)
        }
        Preset::SplineKnots => {
            manifest.set("knots", args.knots);
            let spl = simulate_spline_covariance(p, n, args.knots, &mut rng)?;
            let data = sample_dataset_from_trajectory(&spl.xs, &spl.trajectory, &mut rng)?;
            (data, spl.trajectory)
        }
    };
    manifest.set("holdout", format!("{:?}", args.holdout).to_lowercase());
    if args.holdout == HoldoutArg::Biased {
        let mask = biased_holdout_mask(&truth, &mut rng)?;
        dataset = dataset.with_hidden(&mask)?;
        log::info!("held out {} of {} cells", dataset.missing_count(), n * p);
    }
    dataset.xs = (1..=n).map(|i| vec![i as f64]).collect();
    manifest.set("predictors", "1..n (rescaled to (0, 1] when fitting)");
    save_table(&args.out, &dataset, &crate::io::default_names(p))?;
    save_sidecar(&args.out, &manifest)?;
    save_truth(&args.truth, &truth, &manifest)?;
    log::info!("wrote {} and {}", args.out.display(), args.truth.display());
    Ok(())
}

/// Dataset prepared for fitting plus the predictors to report.
struct Prepared {
    data: Dataset,
    original_xs: Vec<Vec<f64>>,
}

fn max_variance_factor(data: &Dataset) -> CliResult<f64> {
    let mut max: f64 = 0.0;
    for j in 0..data.p() {
        let vals: Vec<f64> = (0..data.n()).filter(|&i| data.observed[(i, j)]).map(|i| data.y[(i, j)]).collect();
        if vals.len() < 2 {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        max = max.max(v);
    }
    if !(max > 0.0) {
        return Err(CliError::Data("cannot scale: no column has positive variance".into()));
    }
    Ok(1.0 / max)
}

fn prepare(path: &Path, scale: ScaleArg, rescale: bool, manifest: &mut RunManifest) -> CliResult<Prepared> {
    manifest.add_input(path)?;
    let mut data = load_table(path)?.dataset;
    manifest.set("data", path.display());
    manifest.set("n", data.n());
    manifest.set("p", data.p());
    manifest.set("missing_cells", data.missing_count());
    let factor = match scale {
        ScaleArg::None => 1.0,
        ScaleArg::MaxVar => max_variance_factor(&data)?,
    };
    manifest.set("scale", format!("{scale:?}").to_lowercase());
    manifest.set("scale_factor", factor);
    if factor != 1.0 {
        data.y *= factor;
    }
    let original_xs = data.xs.clone();
    manifest.set("rescale_predictors", rescale);
    if rescale {
        data.xs = rescale_unit_interval(&data.xs);
    }
    Ok(Prepared { data, original_xs })
}

fn hyperparameters(args: &ChainArgs, kappa: f64, manifest: &mut RunManifest) -> CliResult<Hyperparameters> {
    let hyper = Hyperparameters {
        a1: args.a1,
        a2: args.a2,
        a_sigma: args.a_sigma,
        b_sigma: args.b_sigma,
        l_star: args.l_star,
        k_star: args.k_star,
        kernel: KernelParams::new(kappa, args.nugget)?,
    };
    hyper.validate()?;
    for (k, v) in [("a1", args.a1), ("a2", args.a2), ("a_sigma", args.a_sigma), ("b_sigma", args.b_sigma), ("nugget", args.nugget)] {
        manifest.set(k, v);
    }
    manifest.set("l_star", args.l_star);
    manifest.set("k_star", args.k_star);
    Ok(hyper)
}

/// Parses `--kappa`: returns the policy and the starting length-scale.
fn kappa_policy(args: &ChainArgs) -> CliResult<(KappaPolicy, f64)> {
    let text = args.kappa.trim();
    if text == "heuristic" {
        return Ok((KappaPolicy::Heuristic { n_knots: args.kappa_knots, bin_halfwidth: None }, 10.0));
    }
    if let Some(list) = text.strip_prefix("grid:") {
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad kappa grid value '{v}'"))))
            .collect::<CliResult<Vec<f64>>>()?;
        let first = *values.first().ok_or_else(|| CliError::Usage("empty kappa grid".into()))?;
        return Ok((KappaPolicy::grid(values), first));
    }
    let v: f64 = text
        .parse()
        .map_err(|_| CliError::Usage(format!("--kappa expects a number, 'heuristic' or 'grid:v1,v2,...', got '{text}'")))?;
    Ok((KappaPolicy::Fixed, v))
}

fn chain_config(args: &ChainArgs, seed: u64, policy: KappaPolicy, manifest: Option<&mut RunManifest>) -> ChainConfig {
    let mut cfg = ChainConfig::new(seed).with_iterations(args.iterations, args.burn_in, args.thin);
    cfg.init = match args.init {
        InitArg::Prior => InitScheme::Prior,
        InitArg::DataDriven => InitScheme::DataDriven,
    };
    cfg.mode = match args.mode {
        ModeArg::ZeroMean => MeanMode::ZeroMean,
        ModeArg::LatentMean => MeanMode::LatentMean,
    };
    cfg.kappa_policy = policy;
    cfg.impute_missing = args.impute;
    cfg.warmup_cycles = args.warmup_cycles;
    cfg.init_knots = args.init_knots;
    if let Some(m) = manifest {
        m.set("seed", args.seed);
        m.set("chains", args.chains);
        m.set("iterations", args.iterations);
        m.set("burn_in", args.burn_in);
        m.set("thin", args.thin);
        m.set("init", format!("{:?}", cfg.init));
        m.set("mode", format!("{:?}", cfg.mode));
        m.set("kappa_policy", format!("{:?}", cfg.kappa_policy));
        m.set("kappa_knots", args.kappa_knots);
        m.set("impute", args.impute);
        m.set("warmup_cycles", args.warmup_cycles);
        m.set("init_knots", args.init_knots);
    }
    cfg
}

/// Runs `chains` independent jobs concurrently, one per seed.
fn run_chains<T: Send>(
    args: &ChainArgs,
    job: impl Fn(u64) -> covreg::Result<T> + Sync,
) -> CliResult<Vec<T>> {
    if args.chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    let results: Vec<covreg::Result<T>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..args.chains as u64).map(|c| {
            let job = &job;
            scope.spawn(move || job(args.seed + c))
        }).collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

fn write_archives(
    args: &ChainArgs,
    archives: Vec<PosteriorArchive>,
    original_xs: &[Vec<f64>],
    manifest: &RunManifest,
) -> CliResult<()> {
    let many = archives.len() > 1;
    for (c, mut archive) in archives.into_iter().enumerate() {
        archive.xs = original_xs.to_vec();
        let path = if many { chain_path(&args.out, c) } else { args.out.clone() };
        let mut m = manifest.clone();
        m.settings.insert("chain_seed".into(), (args.seed + c as u64).to_string());
        save_archive(&path, &archive, &m)?;
        log::info!("wrote {} ({} draws)", path.display(), archive.len());
    }
    Ok(())
}

pub fn fit(args: &FitArgs, config: Option<&Path>) -> CliResult<()> {
    let args = &args.chain;
    let started = Instant::now();
    let mut manifest = RunManifest::new("fit");
    manifest.set("config", config.map_or("none".into(), |p| p.display().to_string()));
    let prep = prepare(&args.data, args.scale, !args.no_rescale, &mut manifest)?;
    let (policy, kappa0) = kappa_policy(args)?;
    manifest.set("kappa", &args.kappa);
    let hyper = hyperparameters(args, kappa0, &mut manifest)?;
    chain_config(args, args.seed, policy.clone(), Some(&mut manifest));
    let runs = run_chains(args, |seed| {
        let cfg = chain_config(args, seed, policy.clone(), None);
        run_chain_timed(&cfg, &hyper, &prep.data)
    })?;
    let mut archives = Vec::with_capacity(runs.len());
    for (c, (archive, timing)) in runs.into_iter().enumerate() {
        match archive.kappa {
            Some(k) => log::info!("chain {c}: kappa = {k}"),
            None => log::info!("chain {c}: no kernel"),
        }
        manifest.add_timing(&timing.seconds);
        archives.push(archive);
    }
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_archives(args, archives, &prep.original_xs, &manifest)
}

/// Fills unobserved cells with the last observed value in the column, or
/// the next one before the first observation.
pub fn last_observation_carried_forward(data: &Dataset) -> CliResult<(Dataset, usize)> {
    let (n, p) = (data.n(), data.p());
    let mut y = data.y.clone();
    let mut filled = 0;
    for j in 0..p {
        let first = (0..n)
            .find(|&i| data.observed[(i, j)])
            .ok_or_else(|| CliError::Data(format!("response column {} has no observed value", j + 1)))?;
        let mut last = data.y[(first, j)];
        for i in 0..n {
            if data.observed[(i, j)] {
                last = data.y[(i, j)];
            } else {
                y[(i, j)] = last;
                filled += 1;
            }
        }
    }
    Ok((Dataset::complete(data.xs.clone(), y)?, filled))
}

pub fn baseline_mdw(args: &MdwArgs, config: Option<&Path>) -> CliResult<()> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("baseline mdw");
    manifest.set("config", config.map_or("none".into(), |p| p.display().to_string()));
    let prep = prepare(&args.data, args.scale, false, &mut manifest)?;
    let mut data = prep.data;
    manifest.set("locf", args.locf);
    if data.missing_count() > 0 {
        if !args.locf {
            return Err(CliError::Data(format!(
                "matrix discounting needs complete data ({} unobserved cells); pass --locf to fill them by last observation carried forward",
                data.missing_count()
            )));
        }
        let (filled, count) = last_observation_carried_forward(&data)?;
        log::warn!("workaround: filled {count} unobserved cells by last observation carried forward");
        manifest.set("locf_filled_cells", count);
        data = filled;
    }
    let beta = match args.beta {
        Some(b) => {
            log::info!("beta = {b}");
            b
        }
        None => {
            let b = steady_state_beta(args.h0)?;
            log::info!("beta = {b} (1 - 1/{})", args.h0);
            b
        }
    };
    manifest.set("h0", args.h0);
    manifest.set("beta", beta);
    manifest.set("d0", format!("{} * I", args.h0));
    manifest.set("draws", args.draws);
    manifest.set("seed", args.seed);
    let mut archive = fit_matrix_discounting(&data, beta, args.h0, args.draws, args.seed)?;
    archive.xs = prep.original_xs;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    save_archive(&args.out, &archive, &manifest)?;
    log::info!("wrote {} ({} draws)", args.out.display(), archive.len());
    Ok(())
}

pub fn baseline_homoscedastic(args: &HomoArgs, latent_factor: bool, config: Option<&Path>) -> CliResult<()> {
    let started = Instant::now();
    let name = if latent_factor { "baseline homo-lf" } else { "baseline homo-gp" };
    let chain = &args.chain;
    let mut manifest = RunManifest::new(name);
    manifest.set("config", config.map_or("none".into(), |p| p.display().to_string()));
    let prep = prepare(&chain.data, chain.scale, !chain.no_rescale, &mut manifest)?;
    let p = prep.data.p();
    let (policy, kappa0) = kappa_policy(chain)?;
    manifest.set("kappa", &chain.kappa);
    let kappa = match policy {
        KappaPolicy::Fixed => kappa0,
        KappaPolicy::Heuristic { n_knots, bin_halfwidth } => {
            let cfg = KappaHeuristicConfig { n_knots, bin_halfwidth, ..Default::default() };
            let est = kappa_heuristic_detailed(&prep.data, &cfg)?.kappa;
            if est >= 1.0 { est.round() } else { est }
        }
        KappaPolicy::Grid { .. } => return Err(CliError::Usage("homoscedastic baselines take a fixed or heuristic kappa".into())),
    };
    let hyper = hyperparameters(chain, kappa, &mut manifest)?;
    let df = args.iw_df.unwrap_or(p as f64 + 2.0);
    let sigma_model = SigmaModel::InverseWishart { df, scale: DMatrix::identity(p, p) * args.iw_scale };
    manifest.set("iw_df", df);
    manifest.set("iw_scale", format!("{} * I", args.iw_scale));
    chain_config(chain, chain.seed, KappaPolicy::Fixed, Some(&mut manifest));
    let archives = run_chains(chain, |seed| {
        let cfg = chain_config(chain, seed, KappaPolicy::Fixed, None);
        if latent_factor {
            fit_homoscedastic_latent_factor(&prep.data, &hyper, &sigma_model, &cfg)
        } else {
            fit_homoscedastic_gp_mean(&prep.data, &hyper.kernel, &sigma_model, &cfg)
        }
    })?;
    log::info!("kappa = {kappa}");
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    write_archives(chain, archives, &prep.original_xs, &manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mean: f64,
    pub interval: Option<IntervalSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveSummary {
    pub path: String,
    pub model: String,
    pub draws: usize,
    pub kappa: Option<f64>,
    pub traces: BTreeMap<String, TraceSummary>,
    pub hpd_coverage: Option<f64>,
    pub mean_frobenius_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub model: String,
    pub chains: usize,
    pub threshold: f64,
    /// `R^{1/2}` per monitored quantity.
    pub psrf: BTreeMap<String, f64>,
    /// Share of monitored variance traces below the threshold.
    pub variance_fraction_below: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub mass: f64,
    pub archives: Vec<ArchiveSummary>,
    pub convergence: Vec<ConvergenceSummary>,
    /// Average predictive KL per archive path, when scored.
    pub predictive_kl: Option<BTreeMap<String, f64>>,
}

fn summarize_samples(samples: &[f64], mass: f64) -> CliResult<TraceSummary> {
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    let interval = if samples.len() >= MIN_INTERVAL_SAMPLES { Some(hpd_interval(samples, mass)?) } else { None };
    Ok(TraceSummary { mean, interval })
}

/// Midpoints of `count` equal windows over `0..n`.
fn monitor_points(n: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n.max(1));
    let mut pts: Vec<usize> = (0..count).map(|w| (((w as f64 + 0.5) * n as f64 / count as f64) as usize).min(n - 1)).collect();
    pts.dedup();
    pts
}

/// `R^{1/2}` of the variances `Sigma_jj(x_i)` at monitored points and of
/// every shared scalar trace.
pub fn convergence(archives: &[&PosteriorArchive], points: usize, threshold: f64) -> CliResult<ConvergenceSummary> {
    let first = archives[0];
    let n = first.draws.first().map_or(0, |d| d.len());
    let mut out = BTreeMap::new();
    let mut below = 0;
    let mut total = 0;
    for i in monitor_points(n, points) {
        for j in 0..first.p() {
            let chains: Vec<Vec<f64>> = archives.iter().map(|a| a.element_samples(i, j, j)).collect();
            let r = psrf(&chains)?;
            total += 1;
            if r < threshold {
                below += 1;
            }
            out.insert(format!("Sigma[{j},{j}](x{i})"), r);
        }
    }
    for name in first.traces.keys() {
        if archives.iter().all(|a| a.traces.contains_key(name)) {
            let chains: Vec<Vec<f64>> = archives.iter().map(|a| a.traces[name].clone()).collect();
            if chains.iter().all(|c| c.iter().all(|v| *v == chains[0][0])) {
                continue;
            }
            out.insert(name.clone(), psrf(&chains)?);
        }
    }
    Ok(ConvergenceSummary {
        model: first.model.clone(),
        chains: archives.len(),
        threshold,
        psrf: out,
        variance_fraction_below: below as f64 / total.max(1) as f64,
    })
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("diagnose");
    manifest.set("mass", args.mass);
    manifest.set("psrf_points", args.psrf_points);
    manifest.set("psrf_threshold", args.psrf_threshold);
    let mut archives = Vec::new();
    for path in &args.archive {
        manifest.add_input(path)?;
        archives.push((path.display().to_string(), load_archive(path)?.0));
    }
    let truth = match &args.truth {
        Some(p) => {
            manifest.add_input(p)?;
            Some(load_truth(p)?)
        }
        None => None,
    };
    let mut summaries = Vec::new();
    let mut curves = Vec::new();
    for (path, archive) in &archives {
        if archive.is_empty() {
            return Err(CliError::Data(format!("{path}: archive holds no draws")));
        }
        let mut traces = BTreeMap::new();
        for (name, values) in &archive.traces {
            traces.insert(name.clone(), summarize_samples(values, args.mass)?);
        }
        let (mut coverage, mut frob) = (None, None);
        if let Some(truth) = &truth {
            if archive.len() >= MIN_INTERVAL_SAMPLES {
                coverage = Some(hpd_coverage(archive, truth, args.mass)?);
            }
            let per_draw: Vec<Vec<f64>> = archive.draws.iter().map(|d| frobenius_error(d, truth)).collect::<covreg::Result<_>>()?;
            let n = truth.len();
            let mut total = 0.0;
            for i in 0..n {
                let s: Vec<f64> = per_draw.iter().map(|e| e[i]).collect();
                let summary = summarize_samples(&s, args.mass)?;
                total += summary.mean;
                curves.push((path.clone(), archive.model.clone(), archive.xs[i][0], summary));
            }
            frob = Some(total / n as f64);
        }
        println!(
            "{path}: model {} draws {} kappa {} coverage {} mean-frobenius {}",
            archive.model,
            archive.len(),
            archive.kappa.map_or("-".into(), |k| k.to_string()),
            coverage.map_or("-".into(), |c| format!("{c:.4}")),
            frob.map_or("-".into(), |f| format!("{f:.4}"))
        );
        summaries.push(ArchiveSummary {
            path: path.clone(),
            model: archive.model.clone(),
            draws: archive.len(),
            kappa: archive.kappa,
            traces,
            hpd_coverage: coverage,
            mean_frobenius_error: frob,
        });
    }

    let mut by_model: BTreeMap<&str, Vec<&PosteriorArchive>> = BTreeMap::new();
    for (_, a) in &archives {
        by_model.entry(a.model.as_str()).or_default().push(a);
    }
    let mut conv = Vec::new();
    for (model, group) in by_model {
        if group.len() < 2 {
            continue;
        }
        if group.iter().any(|a| a.len() != group[0].len()) {
            log::warn!("{model}: chains differ in length; skipping convergence check");
            continue;
        }
        let c = convergence(&group, args.psrf_points, args.psrf_threshold)?;
        println!("{model}: {} chains, {:.1}% of variance traces with R^1/2 < {}", c.chains, 100.0 * c.variance_fraction_below, c.threshold);
        conv.push(c);
    }

    let mut kl = None;
    if let (Some(data_path), Some(truth)) = (&args.data, &truth) {
        manifest.add_input(data_path)?;
        let data = load_table(data_path)?.dataset;
        let held_out = data.observed.map(|o| !o);
        if data.missing_count() == 0 {
            log::warn!("{}: no unobserved cells to score", data_path.display());
        } else {
            let refs: Vec<&PosteriorArchive> = archives.iter().map(|(_, a)| a).collect();
            let scores = predictive_kl_study(&refs, &data, &held_out, truth)?;
            let mut map = BTreeMap::new();
            for ((path, a), s) in archives.iter().zip(scores) {
                println!("{path}: model {} predictive KL {s:.4}", a.model);
                map.insert(path.clone(), s);
            }
            kl = Some(map);
        }
    }

    if let Some(out) = &args.frobenius_out {
        let mut w = csv_writer(out)?;
        w.write_record(["archive", "model", "x", "mean", "lo", "hi"]).map_err(csv_err)?;
        for (path, model, x, s) in &curves {
            let (lo, hi) = s.interval.map_or((String::new(), String::new()), |iv| (iv.lower.to_string(), iv.upper.to_string()));
            w.write_record([path.clone(), model.clone(), x.to_string(), s.mean.to_string(), lo, hi]).map_err(csv_err)?;
        }
        w.flush().map_err(csv_err)?;
        save_sidecar(out, &manifest)?;
    }
    let report = DiagnoseReport { mass: args.mass, archives: summaries, convergence: conv, predictive_kl: kl };
    save_report(&args.out, &report, &manifest)
}

fn grid_index(xs: &[Vec<f64>], x: &[f64]) -> Option<usize> {
    xs.iter().position(|g| g.len() == x.len() && g.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0)))
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("predict");
    manifest.add_input(&args.archive)?;
    manifest.add_input(&args.data)?;
    manifest.set("scale_factor", args.scale_factor);
    let (archive, _) = load_archive(&args.archive)?;
    if archive.is_empty() {
        return Err(CliError::Data("archive holds no draws".into()));
    }
    let table = load_table(&args.data)?;
    let data = &table.dataset;
    if data.p() != archive.p() {
        return Err(CliError::Data(format!("data has {} responses but the archive has {}", data.p(), archive.p())));
    }
    let q = data.xs[0].len();
    let mut w = csv_writer(&args.out)?;
    let header: Vec<String> = std::iter::once("row".to_string())
        .chain((1..=q).map(|c| format!("x{c}")))
        .chain(["response", "mean", "sd"].map(String::from))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.n() {
        let missing = data.missing_in_row(i);
        if missing.is_empty() {
            continue;
        }
        let g = grid_index(&archive.xs, &data.xs[i])
            .ok_or_else(|| CliError::Data(format!("{}:{}: predictor is not a fitted grid point", args.data.display(), i + 2)))?;
        let obs = data.observed_in_row(i);
        let vals = DVector::from_iterator(obs.len(), obs.iter().map(|&j| data.y[(i, j)] * args.scale_factor));
        let mut sum = DVector::zeros(missing.len());
        let mut sq = DVector::zeros(missing.len());
        let mut var = DVector::zeros(missing.len());
        for draw in &archive.draws {
            let pred = conditional_predictive(&draw.mean_at(g), &draw.sigmas[g], &obs, &vals)?;
            sum += &pred.mean;
            sq += pred.mean.component_mul(&pred.mean);
            var += pred.covariance.diagonal();
        }
        let m = archive.len() as f64;
        for (r, &j) in missing.iter().enumerate() {
            let mean = sum[r] / m;
            let total = var[r] / m + (sq[r] / m - mean * mean).max(0.0);
            let row: Vec<String> = std::iter::once((i + 1).to_string())
                .chain(data.xs[i].iter().map(|v| v.to_string()))
                .chain([table.response_names[j].clone(), mean.to_string(), total.sqrt().to_string()])
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;
    save_sidecar(&args.out, &manifest)
}

pub fn emit_series(args: &EmitSeriesArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("emit-series");
    manifest.add_input(&args.archive)?;
    manifest.set("mass", args.mass);
    let (archive, _) = load_archive(&args.archive)?;
    if archive.xs.iter().any(|x| x.len() != 1) {
        return Err(CliError::Data("emit-series needs a scalar predictor".into()));
    }
    let truth: Option<CovarianceTrajectory> = match &args.truth {
        Some(p) => {
            manifest.add_input(p)?;
            Some(load_truth(p)?)
        }
        None => None,
    };
    if let Some(t) = &truth {
        if t.len() != archive.xs.len() || t.p() != archive.p() {
            return Err(CliError::Data("truth and archive are on different grids".into()));
        }
    }
    let mut bands = element_bands(&archive, args.mass)?;
    bands.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)).then(archive.xs[a.point][0].total_cmp(&archive.xs[b.point][0])));
    let mut w = csv_writer(&args.out)?;
    let mut header = vec!["x", "element_i", "element_j", "mean", "lo", "hi"];
    if truth.is_some() {
        header.push("truth");
    }
    w.write_record(&header).map_err(csv_err)?;
    for b in &bands {
        let mut row = vec![
            archive.xs[b.point][0].to_string(),
            b.row.to_string(),
            b.col.to_string(),
            b.mean.to_string(),
            b.interval.lower.to_string(),
            b.interval.upper.to_string(),
        ];
        if let Some(t) = &truth {
            row.push(t.sigmas[b.point][(b.row, b.col)].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    save_sidecar(&args.out, &manifest)?;
    let _ = std::io::stdout().flush();
    Ok(())
}
