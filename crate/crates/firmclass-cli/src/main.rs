//! `firmclass` — train, run, and evaluate the hierarchical industry
//! classifier from the command line.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical failure
//! during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "firmclass", version, about = "Hierarchical firm-to-industry classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic taxonomy, assignments, and embeddings.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Classify firms for one period using a trained checkpoint.
    Predict(PredictArgs),
    /// Score a predictions file against ground truth.
    Eval(EvalArgs),
    /// Train all model variants over several seeds and compare them.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving taxonomy.tsv, assignments.csv, truth.csv,
    /// firm_embeddings.csv, and definitions.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Children per node at each level, e.g. "3,4".
    #[arg(long, default_value = "3,4")]
    branching: String,
    #[arg(long, default_value_t = 32)]
    dimension: usize,
    #[arg(long, default_value_t = 20)]
    firms_per_leaf: usize,
    /// Training periods; one extra held-out period is always emitted.
    #[arg(long, default_value_t = 3)]
    periods: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Per-period cluster movement as a fraction of the separation.
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Per-period probability that a firm is replaced by a new one.
    #[arg(long, default_value_t = 0.0)]
    churn: f64,
    /// Level whose codes label the assignment files; 0 = leaf level.
    #[arg(long, default_value_t = 0)]
    focal_level: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Training hyperparameters; unset flags fall back to the config file, then
/// to built-in defaults.
#[derive(Args, Clone, Default)]
struct TrainOpts {
    /// Model variant: full, no-ha, or no-ha-no-dir.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    focal_level: Option<usize>,
    /// Fraction of cases held out to pick the best epoch (0 disables).
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Plain `key = value` file supplying any of the options above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    assignments: PathBuf,
    #[arg(long)]
    firm_embeddings: PathBuf,
    #[arg(long)]
    definitions: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint output path; the loss log goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    firm_embeddings: PathBuf,
    #[arg(long)]
    definitions: PathBuf,
    /// Period label to classify; defaults to the latest label present.
    #[arg(long)]
    period: Option<String>,
    /// File listing firm ids to classify (one per line); defaults to every
    /// firm with a vector in the period.
    #[arg(long)]
    firms: Option<PathBuf>,
    /// Predictions CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Add per-level conditional probability columns.
    #[arg(long)]
    explain: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Ground truth CSV (firm_id,period,code).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    /// Restrict macro-F1 averaging to classes present in the data.
    #[arg(long)]
    present_only: bool,
    /// Add mean tree distance between predicted and true nodes.
    #[arg(long)]
    tree_distance: bool,
    /// Comma-separated production rates, e.g. "0.5,0.6,0.7".
    #[arg(long)]
    production_rates: Option<String>,
    /// Compute misclassification cost; requires --etr and --income.
    #[arg(long)]
    cost: bool,
    /// Effective tax rates CSV (code,rate).
    #[arg(long)]
    etr: Option<PathBuf>,
    /// Firm income CSV (firm_id,income).
    #[arg(long)]
    income: Option<PathBuf>,
    /// Emit the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ground truth CSV for the held-out period.
    #[arg(long)]
    truth: PathBuf,
    /// Comma-separated seeds or an inclusive-exclusive range like "0..10".
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Run seeds on worker threads instead of sequentially.
    #[arg(long)]
    parallel_seeds: bool,
    /// Per-run results CSV output path; summary always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Predict(args) => commands::predict::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Ablate(args) => commands::ablate::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                firmclass::Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
