//! Command-line front end: dataset and archive files, run manifests and the
//! `simulate`, `fit`, `baseline`, `diagnose`, `predict` and `emit-series`
//! subcommands.

pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;

use cli::{BaselineCommand, Cli, Command};
pub use error::{CliError, CliResult};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).format_target(false).try_init();
}

/// Parses arguments (program name first) and runs the subcommand.
pub fn run(args: Vec<OsString>) -> CliResult<()> {
    let args = cli::expand_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    init_logging(cli.verbose);
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a, config),
        Command::Baseline(BaselineCommand::Mdw(a)) => commands::baseline_mdw(a, config),
        Command::Baseline(BaselineCommand::HomoGp(a)) => commands::baseline_homoscedastic(a, false, config),
        Command::Baseline(BaselineCommand::HomoLf(a)) => commands::baseline_homoscedastic(a, true, config),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Predict(a) => commands::predict(a),
        Command::EmitSeries(a) => commands::emit_series(a),
    }
}
