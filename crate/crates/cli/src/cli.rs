//! Command-line definitions and config-file expansion.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Each key
//! is the long name of a flag of the chosen subcommand; `key = true` sets a
//! switch and `key = false` leaves it off. Config entries are placed before
//! the explicit flags, so flags given on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "covreg", version, about = "Bayesian nonparametric covariance regression")]
pub struct Cli {
    /// Increase log detail (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Flat `key = value` file supplying flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and its true covariance trajectory.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Fit the heteroscedastic model with the Gibbs sampler.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Fit a comparison model.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Summaries, error curves, convergence and predictive scores of archives.
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
    /// Predictive distributions of unobserved responses given observed ones.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Per-element posterior mean and HPD band against the predictor, as CSV.
    #[command(args_override_self = true)]
    EmitSeries(EmitSeriesArgs),
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Wishart matrix discounting with forward filtering backward sampling.
    #[command(args_override_self = true)]
    Mdw(MdwArgs),
    /// Independent GP means with a constant inverse-Wishart covariance.
    #[command(args_override_self = true)]
    HomoGp(HomoArgs),
    /// Latent-factor mean with a constant inverse-Wishart covariance.
    #[command(args_override_self = true)]
    HomoLf(HomoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Prior draw: p = 10, n = 100, latent mean.
    #[value(name = "prior-draw", alias = "sec4.1")]
    PriorDraw,
    /// Spline-knot covariance: p = 30, n = 500, zero mean.
    #[value(name = "spline-knots", alias = "sec4.3")]
    SplineKnots,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HoldoutArg {
    None,
    /// Hide about 5% of cells, more where the true covariance is small.
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Prior,
    DataDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ZeroMean,
    LatentMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    None,
    /// Divide every response by the largest column variance.
    MaxVar,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of predictor points (preset value when omitted).
    #[arg(long)]
    pub n: Option<usize>,
    /// Response dimension (preset value when omitted).
    #[arg(long)]
    pub p: Option<usize>,
    /// Knots of the spline-knot generator.
    #[arg(long, default_value_t = 5)]
    pub knots: usize,
    #[arg(long, value_enum, default_value_t = HoldoutArg::None)]
    pub holdout: HoldoutArg,
    /// Dataset CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// True trajectory JSON to write.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Archive JSON to write (`<stem>.chainK.<ext>` per chain when --chains > 1).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 5_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    /// Independent chains, seeded `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value_t = 10)]
    pub l_star: usize,
    #[arg(long, default_value_t = 10)]
    pub k_star: usize,
    #[arg(long, default_value_t = 2.0)]
    pub a1: f64,
    #[arg(long, default_value_t = 2.0)]
    pub a2: f64,
    /// Shape of the noise precision prior.
    #[arg(long, default_value_t = 1.0)]
    pub a_sigma: f64,
    /// Rate of the noise precision prior.
    #[arg(long, default_value_t = 0.1)]
    pub b_sigma: f64,
    /// Length-scale: a number, `heuristic`, or `grid:v1,v2,...`.
    #[arg(long, default_value = "10")]
    pub kappa: String,
    /// Knots of the local covariance used by the heuristic.
    #[arg(long, default_value_t = 20)]
    pub kappa_knots: usize,
    #[arg(long, default_value_t = covreg::gp_kernel::DEFAULT_NUGGET)]
    pub nugget: f64,
    #[arg(long, value_enum, default_value_t = InitArg::DataDriven)]
    pub init: InitArg,
    #[arg(long, value_enum, default_value_t = ModeArg::LatentMean)]
    pub mode: ModeArg,
    /// Impute unobserved responses every sweep instead of conditioning on observed cells.
    #[arg(long)]
    pub impute: bool,
    #[arg(long, value_enum, default_value_t = ScaleArg::None)]
    pub scale: ScaleArg,
    /// Use predictors as given instead of rescaling each coordinate to (0, 1].
    #[arg(long)]
    pub no_rescale: bool,
    #[arg(long, default_value_t = 3)]
    pub warmup_cycles: usize,
    #[arg(long, default_value_t = 20)]
    pub init_knots: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Args)]
pub struct HomoArgs {
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Inverse-Wishart degrees of freedom (default p + 2).
    #[arg(long)]
    pub iw_df: Option<f64>,
    /// Inverse-Wishart scale is this multiple of the identity.
    #[arg(long, default_value_t = 1.0)]
    pub iw_scale: f64,
}

#[derive(Debug, Args)]
pub struct MdwArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Initial degrees of freedom; `D_0 = h0 I`.
    #[arg(long, default_value_t = 40.0)]
    pub h0: f64,
    /// Discount factor (default `1 - 1/h0`).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Backward-sampled trajectories to keep.
    #[arg(long, default_value_t = covreg::baselines::DEFAULT_DISCOUNT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Workaround for incomplete data: fill unobserved cells with the last
    /// observed value of their column (the next one for leading gaps).
    #[arg(long)]
    pub locf: bool,
    #[arg(long, value_enum, default_value_t = ScaleArg::None)]
    pub scale: ScaleArg,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Archives to summarize; archives of the same model are treated as chains.
    #[arg(long, required = true, num_args = 1..)]
    pub archive: Vec<PathBuf>,
    /// True trajectory JSON (enables coverage, Frobenius and predictive scores).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Dataset the archives were fitted to; its unobserved cells are scored.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub mass: f64,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of Frobenius error curves.
    #[arg(long)]
    pub frobenius_out: Option<PathBuf>,
    /// Predictor points at which variance traces are monitored for convergence.
    #[arg(long, default_value_t = 12)]
    pub psrf_points: usize,
    #[arg(long, default_value_t = 1.2)]
    pub psrf_threshold: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// CSV of partially observed rows at predictor values of the archive.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Apply this factor to the responses first (the `scale_factor` of the fit).
    #[arg(long, default_value_t = 1.0)]
    pub scale_factor: f64,
}

#[derive(Debug, Args)]
pub struct EmitSeriesArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub mass: f64,
    /// Adds a `truth` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

const SUBCOMMAND_NAMES: &[&str] =
    &["simulate", "fit", "baseline", "diagnose", "predict", "emit-series", "mdw", "homo-gp", "homo-lf"];

/// Parses config-file text into flag tokens.
pub fn config_tokens(text: &str, source: &str) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected 'key = value'", idx + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("{source}:{}: invalid key '{key}'", idx + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

/// Splices config-file flags after the subcommand names so explicit flags
/// (which come later) take precedence.
pub fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut config = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        }
    }
    let Some(path) = config else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let tokens = config_tokens(&text, &path.display().to_string())?;
    let mut insert = 1;
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if SUBCOMMAND_NAMES.contains(&s.as_ref()) {
            insert = i + 1;
        } else if !(s == "-v" || s.starts_with("-vv") || s == "--verbose") {
            break;
        }
    }
    let mut out = args[..insert].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[insert..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_lines() {
        let t = config_tokens("# c\nseed = 4\nimpute = true\nno_rescale = false\n\n", "c").unwrap();
        assert_eq!(t, os(&["--seed", "4", "--impute"]));
        assert!(config_tokens("seed 4", "c").is_err());
    }

    #[test]
    fn presets_accept_short_aliases() {
        for (name, want) in [("prior-draw", Preset::PriorDraw), ("sec4.1", Preset::PriorDraw), ("sec4.3", Preset::SplineKnots)] {
            let cli = Cli::try_parse_from(["covreg", "simulate", "--preset", name, "--out", "d", "--truth", "t"]).unwrap();
            let Command::Simulate(s) = cli.command else { panic!("expected simulate") };
            assert_eq!(s.preset, want);
        }
    }

    #[test]
    fn explicit_flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed = 4\nthin = 3\n").unwrap();
        let args = os(&["covreg", "fit", "--config", path.to_str().unwrap(), "--seed", "9", "--data", "d", "--out", "o"]);
        let expanded = expand_config(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        let Command::Fit(f) = cli.command else { panic!("expected fit") };
        assert_eq!(f.chain.seed, 9);
        assert_eq!(f.chain.thin, 3);
    }

    #[test]
    fn config_goes_after_nested_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "h0 = 20\n").unwrap();
        let args = os(&["covreg", "-v", "baseline", "mdw", "--data", "d", "--out", "o", "--config", path.to_str().unwrap()]);
        let cli = Cli::try_parse_from(expand_config(args).unwrap()).unwrap();
        let Command::Baseline(BaselineCommand::Mdw(m)) = cli.command else { panic!("expected mdw") };
        assert_eq!(m.h0, 20.0);
    }
}
