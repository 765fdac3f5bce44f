//! `mcvi`: desk-scale experiment runner. Every command writes CSV/JSON data
//! files plus a `manifest.json` into `--out`.

mod bench;
mod gradcheck;
mod manifest;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mcvi::annealing::ScheduleKind;

#[derive(Parser, Debug)]
#[command(name = "mcvi", version, about = "Langevin SIS / MALA AIS evidence and gradient studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimator and gradient samples against the exact pPCA evidence.
    PpcaBench(bench::BenchArgs),
    /// Fitted-posterior samples per method on one toy observation.
    ToyPosterior(toy::PosteriorArgs),
    /// Squared parameter error of toy-model fits per method, dim and seed.
    ToyParamEst(toy::ParamEstArgs),
    /// Finite-difference checks of every gradient; exit 1 on any failure.
    Gradcheck(gradcheck::GradcheckArgs),
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Step-size adaptation flags.
#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct Adapt {
    /// Acceptance target; defaults to 0.8 for AIS and 0.9 otherwise.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub eta0: f64,
    #[arg(long, default_value_t = 50)]
    pub warmup_steps: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Fixed)]
    pub schedule: ScheduleArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleArg {
    Fixed,
    Sigmoidal,
    Learnable,
}

impl From<ScheduleArg> for ScheduleKind {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Fixed => ScheduleKind::Fixed,
            ScheduleArg::Sigmoidal => ScheduleKind::Sigmoidal,
            ScheduleArg::Learnable => ScheduleKind::Learnable,
        }
    }
}

/// Reports a flag combination clap cannot express and exits with status 2.
pub fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ArgumentConflict, msg)
        .exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PpcaBench(a) => bench::run(a),
        Command::ToyPosterior(a) => toy::run_posterior(a),
        Command::ToyParamEst(a) => toy::run_param_est(a),
        Command::Gradcheck(a) => gradcheck::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
