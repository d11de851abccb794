//! `phmcts`: plan, simulate, benchmark and replay inference from the command line.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Refused(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Config(format!("{}: {e}", path.display()))
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Refused(_) => 4,
        }
    }
}

impl From<phmcts::Error> for CliError {
    fn from(e: phmcts::Error) -> Self {
        let msg = e.to_string();
        match e {
            phmcts::Error::Infeasible(_) => CliError::Infeasible(msg),
            phmcts::Error::RefuseToPlan(_) => CliError::Refused(msg),
            _ => CliError::Config(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "phmcts",
    version,
    about = "Prediction-heuristic game-tree planner for two-agent crossings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan once from the scenario's initial state.
    Plan(PlanArgs),
    /// Run a closed-loop simulation.
    Simulate(SimulateArgs),
    /// Compare solvers over scenarios, budgets and seeds.
    Benchmark(BenchmarkArgs),
    /// Replay courtesy inference over a recorded trace.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Proposed,
    General,
    Alternating,
    Exhaustive,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Proposed => "proposed",
            Solver::General => "general",
            Solver::Alternating => "alternating",
            Solver::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Prediction file; noisy copies of the opponent's cruise are used otherwise.
    #[arg(long, conflicts_with = "synthetic_sigma")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub synthetic_sigma: Option<f64>,
    #[arg(long, default_value_t = 30_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = phmcts::search::DEFAULT_EXPLORATION)]
    pub exploration_c: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub heuristic: OnOff,
    /// `general` is the same as `--heuristic off`.
    #[arg(long, value_enum, default_value_t = Solver::Proposed)]
    pub solver: Solver,
    /// Curve sampling period in iterations.
    #[arg(long, default_value_t = 100)]
    pub curve_stride: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Simulation config; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub synthetic_sigma: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub exploration_c: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub heuristic: Option<OnOff>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Scenario files; repeat for a corpus.
    #[arg(long, required = true, num_args = 1..)]
    pub scenario: Vec<PathBuf>,
    #[arg(long, value_enum, num_args = 1.., value_delimiter = ',', default_values_t = [Solver::Proposed, Solver::General])]
    pub solver: Vec<Solver>,
    /// Iteration budgets of the tree solvers.
    #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [2_000usize, 5_000, 10_000])]
    pub iterations: Vec<usize>,
    /// Runs per (solver, budget).
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.4)]
    pub synthetic_sigma: f64,
    #[arg(long, default_value_t = phmcts::search::DEFAULT_EXPLORATION)]
    pub exploration_c: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Trace CSV written by `simulate`.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    /// Simulation config giving the opponent's reward shape and the inference cadence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => commands::plan(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Infer(a) => commands::infer(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
