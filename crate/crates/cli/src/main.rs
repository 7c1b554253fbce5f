mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use ace_lab::AceError;
use clap::{Args, Parser, Subcommand};

/// Adaptively compressed exchange solver and its verification toolkit.
#[derive(Debug, Parser)]
#[command(name = "ace", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the fixed-point iteration on one problem.
    Solve(SolveArgs),
    /// Jacobian spectrum, rate bounds, fixed-point landscape and genericity.
    Analyze(AnalyzeArgs),
    /// Rate-vs-bound table over a grid of gaps, |B| and seeds.
    Sweep(SweepArgs),
    /// Reproduce one of the two small counterexamples.
    Counterexample(CounterexampleArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
    /// Re-execute the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Generator spec, e.g. `N=32,n=4,gap=0.5,bnorm=1,seed=7` or `model:N=64,n=4`.
    #[arg(long = "gen", conflicts_with = "problem", required_unless_present = "problem")]
    pub generator: Option<String>,
    /// Problem manifest (JSON) referencing Matrix Market files.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// `auto` or a number; defaults to the problem's stored shift.
    #[arg(long)]
    pub shift: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// `a-eigvecs`, `random:<seed>` or `file:<path.mtx>`.
    #[arg(long, default_value = "a-eigvecs")]
    pub init: String,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "ace-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Largest number of index sets to enumerate.
    #[arg(long, default_value_t = ace_lab::analysis::ENUMERATION_CAP)]
    pub cap: usize,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, default_value = "ace-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long = "N", default_value_t = 32)]
    pub dim: usize,
    #[arg(short = 'n', long = "n", default_value_t = 4)]
    pub n: usize,
    /// Comma-separated gaps.
    #[arg(long, default_value = "0.3,1,3", value_delimiter = ',')]
    pub gaps: Vec<f64>,
    /// Comma-separated values of |B|_2.
    #[arg(long, default_value = "1", value_delimiter = ',')]
    pub bnorms: Vec<f64>,
    /// Seed range `a..b` (half open) or a comma-separated list.
    #[arg(long, default_value = "0..10")]
    pub seeds: String,
    #[arg(long, default_value = "real")]
    pub field: String,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, default_value = "ace-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CounterexampleArgs {
    /// `2x2` or `3x3`.
    pub which: String,
    /// Also write trace.csv, summary.json and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Fewer trials per invariant.
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub sequential: bool,
    /// Write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const OTHER_FIXED_POINT: u8 = 3;
    pub const MAX_ITER: u8 = 4;
}

fn error_code(e: &AceError) -> u8 {
    use AceError::*;
    match e {
        Io(_) | Json(_) | Parse(_) | UnknownName(_) | InvalidParameter(_) | RankOutOfRange { .. }
        | DimensionMismatch(_) | NotHermitian { .. } | NotOrthonormal { .. } | ShiftInsufficient { .. }
        | EnumerationCapExceeded { .. } => exit::USAGE,
        _ => exit::INTERNAL,
    }
}

pub fn execute(argv: Vec<String>) -> u8 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => commands::solve(a, &argv),
        Command::Analyze(a) => commands::analyze(a, &argv),
        Command::Sweep(a) => commands::sweep(a, &argv),
        Command::Counterexample(a) => commands::counterexample(a, &argv),
        Command::Verify(a) => commands::verify(a),
        Command::Replay(a) => manifest::replay(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        error_code(&e)
    })
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args().collect()))
}
