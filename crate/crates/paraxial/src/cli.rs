//! Argument parsing and dispatch for the `paraxial` binary.
//!
//! Exit codes: 0 when every embedded check passes, 1 when a check fails,
//! 2 for configuration, input or runtime errors and refused requests.
//! Stdout carries exactly one JSON status object; check lines and error
//! messages go to stderr.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::{self, CommandError, Context};
use crate::config::RunConfig;
use crate::report::Outcome;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "paraxial", version, about = "Paraxial white-noise limit of waves in randomly layered media")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding run.master_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for ensembles. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Also compare against closed-form or exact references.
    #[arg(long, global = true)]
    pub oracle_check: bool,
    /// Override the regularization delta.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Override experiment.eps_list (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample one medium path and compare its autocovariance with theory.
    ValidateNoise,
    /// Check the stationary covariance closed form on a random parameter grid.
    VerifyCovariance,
    /// Ensemble of the limiting equation with its exact laws.
    RunSpde,
    /// Ensemble of the full regularized model.
    RunFull,
    /// Fit the decay rate of the coherent field.
    DecayFit,
    /// Full model against the limit for a decreasing list of eps.
    Converge,
    /// Second-order remainder of the small-mu expansion.
    ExpandMu,
}

impl Command {
    pub fn run(self, ctx: &Context) -> Result<Outcome, CommandError> {
        match self {
            Command::ValidateNoise => commands::validate_noise(ctx),
            Command::VerifyCovariance => commands::verify_covariance(ctx),
            Command::RunSpde => commands::run_spde(ctx),
            Command::RunFull => commands::run_full(ctx),
            Command::DecayFit => commands::decay_fit(ctx),
            Command::Converge => commands::converge(ctx),
            Command::ExpandMu => commands::expand_mu(ctx),
        }
    }
}

/// Reads the configuration and applies command-line overrides.
pub fn build_context(common: &Common) -> Result<Context, CommandError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.run.master_seed = Some(seed);
    }
    if let Some(delta) = common.delta {
        config.set_delta(delta);
    }
    if let Some(eps) = &common.eps_list {
        config.experiment.eps_list = eps.clone();
    }
    Ok(Context { config, workers: common.workers, out: common.out.clone(), oracle_check: common.oracle_check })
}

fn report(outcome: &Outcome) -> i32 {
    for c in &outcome.checks {
        eprintln!("{} {} = {:e} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    println!("{}", outcome.status_json());
    if outcome.passed() {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let name = command_name(cli.command);
    match build_context(&cli.common).and_then(|ctx| cli.command.run(&ctx)) {
        Ok(outcome) => report(&outcome),
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({ "status": "ERROR", "command": name, "error": e.to_string() }));
            EXIT_ERROR
        }
    }
}

pub fn command_name(c: Command) -> &'static str {
    match c {
        Command::ValidateNoise => "validate-noise",
        Command::VerifyCovariance => "verify-covariance",
        Command::RunSpde => "run-spde",
        Command::RunFull => "run-full",
        Command::DecayFit => "decay-fit",
        Command::Converge => "converge",
        Command::ExpandMu => "expand-mu",
    }
}
