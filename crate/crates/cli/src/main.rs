//! `spanqa`: build, inspect, split and filter synthetic QA datasets, drive
//! the iterative filter loop and check the toy model's gradients.
//!
//! Exit codes: 0 success, 1 runtime or data error (including an invalid
//! corpus under `validate`), 2 bad configuration or usage, 3 gradient
//! check tolerance exceeded.

mod commands;
mod config;
mod external;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spanqa_core::dataset::{BuildMode, SplitStrategy};
use spanqa_core::filter::MatchMode;

#[derive(Debug, Parser)]
#[command(
    name = "spanqa",
    version,
    about = "Synthetic extractive-QA data with diverse answer types"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Top-level seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Leave the `generated_at_unix` field out of reports.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every corpus record; exits 1 if any is invalid.
    Validate(ValidateArgs),
    /// Build a dataset and its statistics from a corpus.
    Build(BuildArgs),
    /// Answer-type distribution and answer-length histogram of a dataset.
    Stats(StatsArgs),
    /// Split a dataset into the initial set and the filter parts.
    Split(SplitArgs),
    /// Filter one part against a prediction file.
    Filter(FilterArgs),
    /// Run the fine-tune / predict / filter loop.
    Run(RunArgs),
    /// Compare tape gradients of the toy model with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a dataset as SQuAD-style JSON Lines.
    ExportSquad(ExportArgs),
    /// Toy-model predictions for a dataset (usable as an external predict hook).
    Predict(PredictArgs),
    /// Fine-tune the toy model on a dataset (usable as an external fine-tune hook).
    FineTune(FineTuneArgs),
    /// Train the toy model on the separable task and report the loss trace.
    ToyTrain(ToyTrainArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    NeOnly,
    Diverse,
    Random,
}

impl From<ModeArg> for BuildMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::NeOnly => BuildMode::NeOnly,
            ModeArg::Diverse => BuildMode::Diverse,
            ModeArg::Random => BuildMode::Random,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Dataset output (JSON Lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Statistics output; defaults to `<out>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Span extending threshold in percent.
    #[arg(long)]
    pub omega: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Lower edges of the second and later length bins.
    #[arg(long, value_delimiter = ',')]
    pub edges: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Uniform,
    Stratified,
}

impl From<StrategyArg> for SplitStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Uniform => SplitStrategy::Uniform,
            StrategyArg::Stratified => SplitStrategy::Stratified,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct SplitFlags {
    #[arg(long)]
    pub initial_size: Option<usize>,
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub plan: SplitFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MatchArg {
    ExactOffsets,
    NormalizedText,
}

impl From<MatchArg> for MatchMode {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::ExactOffsets => MatchMode::ExactOffsets,
            MatchArg::NormalizedText => MatchMode::NormalizedText,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct FilterFlags {
    #[arg(long)]
    pub k: Option<usize>,
    /// Substring-route probability threshold.
    #[arg(long)]
    pub gamma_sub: Option<f64>,
    #[arg(long, value_enum)]
    pub match_mode: Option<MatchArg>,
    /// Replace substring-kept answers by the matched prediction.
    #[arg(long)]
    pub relabel_substring: bool,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub part: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub filter: FilterFlags,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub plan: SplitFlags,
    #[command(flatten)]
    pub filter: FilterFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep the `meta` field needed for a lossless re-import.
    #[arg(long)]
    pub with_meta: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Toy checkpoint to load; a fresh model is used when absent or missing.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FineTuneArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Loaded if it exists, then overwritten.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyTrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code_for(&e))
        }
    }
}
