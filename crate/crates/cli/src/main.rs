//! `rsm`: generate puzzle datasets, train, evaluate and dump rollout traces.
//!
//! Every command writes into an `--out` directory with a `manifest.json`
//! at its root. Exit status is 0 on success, 1 on runtime failure and 2 on
//! usage or configuration errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsm_core::RsmError;

#[derive(Parser, Debug)]
#[command(
    name = "rsm",
    version,
    about = "Recursive two-state solver: data, training, evaluation, traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate (or import) a puzzle dataset.
    GenData(GenDataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy, settling, steps to solve.
    Eval(EvalArgs),
    /// Dump the per-step decoded outputs for one instance.
    Trace(TraceArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Sudoku,
    Maze,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    domain: DomainArg,
    #[arg(long, required_unless_present = "import_csv")]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sudoku: number of givens to keep (17..=81).
    #[arg(long, default_value_t = 40)]
    clues: usize,
    /// Maze grid width (odd, at least 5).
    #[arg(long, default_value_t = 31)]
    width: usize,
    /// Maze grid height (odd, at least 5).
    #[arg(long, default_value_t = 31)]
    height: usize,
    /// First puzzle id assigned.
    #[arg(long, default_value_t = 0)]
    id_offset: u32,
    /// Import Sudoku `givens,solution` CSV rows instead of generating.
    #[arg(long, conflicts_with = "count")]
    import_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key=value` config with model and training keys.
    #[arg(long)]
    config: PathBuf,
    /// Dataset JSONL (or a directory containing `data.jsonl`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint; use the `.ema` file to evaluate averaged weights.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Outer steps at test time (defaults to the checkpoint's depth).
    #[arg(long = "h-test", alias = "H-test")]
    h_test: Option<usize>,
    /// Inner updates per outer step (defaults to the checkpoint's).
    #[arg(long = "l-test", alias = "L-test")]
    l_test: Option<usize>,
    /// Settle window in unchanged comparisons.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write one trace file per instance under `traces/`.
    #[arg(long)]
    traces: bool,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Position of the instance in the dataset.
    #[arg(long, conflicts_with = "puzzle_id")]
    index: Option<usize>,
    /// Select the instance by puzzle id instead.
    #[arg(long)]
    puzzle_id: Option<u32>,
    #[arg(long = "h-test", alias = "H-test")]
    h_test: Option<usize>,
    #[arg(long = "l-test", alias = "L-test")]
    l_test: Option<usize>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &RsmError) -> u8 {
    match err {
        RsmError::Usage(_) | RsmError::Config(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Trace(a) => commands::trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
