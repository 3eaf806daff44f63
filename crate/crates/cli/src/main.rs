//! Command-line front end: calibrate classifier output against a small
//! labeled set, fit ensembles and covariate models, simulate, and score.

mod commands;
mod json;
mod opts;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vacalib::Error;

use opts::Opts;

#[derive(Parser, Debug)]
#[command(name = "vacalib", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Single-classifier posterior for class probabilities.
    Calibrate(Run),
    /// Several classifiers sharing one class-probability vector.
    Ensemble(Run),
    /// Class probabilities that depend on covariate columns.
    Covariate(Run),
    /// Posterior mode by EM.
    Map(Run),
    /// Replicated synthetic experiments.
    Simulate(Run),
    /// CSMF accuracy, bias and chance-corrected concordance.
    Metrics(Run),
    /// Per-record class membership probabilities.
    PredictIndividual(Run),
}

#[derive(clap::Args, Debug)]
struct Run {
    /// TOML file with the same keys as the long flags (underscored).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: Opts,
}

fn run(cmd: Cmd) -> vacalib::Result<()> {
    let (f, run): (fn(&Opts) -> vacalib::Result<()>, Run) = match cmd {
        Cmd::Calibrate(r) => (commands::calibrate, r),
        Cmd::Ensemble(r) => (commands::ensemble, r),
        Cmd::Covariate(r) => (commands::covariate, r),
        Cmd::Map(r) => (commands::map, r),
        Cmd::Simulate(r) => (commands::simulate, r),
        Cmd::Metrics(r) => (commands::metrics, r),
        Cmd::PredictIndividual(r) => (commands::predict_individual, r),
    };
    let mut opts = Opts::merged(run.opts, run.config.as_deref())?;
    opts.resolve_seed()?;
    f(&opts)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
