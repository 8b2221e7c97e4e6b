//! The `seglm` command line tool.

mod commands;
mod config;
mod ladder;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
use seglm_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] seglm_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "seglm", version, about = "Masked segmental language models for unsupervised segmentation")]
pub struct Cli {
    /// Seed for all randomness (falls back to SEGLM_SEED, then the config).
    #[arg(long, global = true, env = "SEGLM_SEED")]
    pub seed: Option<u64>,
    /// Validate inputs and configuration, then stop before any model work.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, split, deduplicate and optionally balance raw corpora.
    Preprocess(PreprocessArgs),
    /// Corpus composition statistics as tab-separated rows.
    Stats(StatsArgs),
    /// Train CBOW character embeddings and write them with their vocabulary.
    EmbedInit(EmbedInitArgs),
    /// Train a model from scratch (or resume a pre-training checkpoint).
    Pretrain(TrainArgs),
    /// Train from a checkpoint with a fresh optimizer and step counter.
    Finetune(TrainArgs),
    /// Segment every line of a file with a checkpoint.
    Segment(SegmentArgs),
    /// Score segmented output against gold.
    Evaluate(EvaluateArgs),
    /// Train once per point of a learning-rate by dropout grid.
    Sweep(SweepArgs),
    /// Fine-tune at increasing target sizes and tabulate F1 per model and size.
    Ladder(ladder::LadderArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input corpora, concatenated in order.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also drop lines that are mostly non-alphabetic.
    #[arg(long)]
    pub noisy_web: bool,
    /// Longest kept line; longer lines are split.
    #[arg(long, default_value_t = 2000)]
    pub max_chars: usize,
    /// File of boilerplate substrings, one per line; matching lines are dropped.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    /// Held-out files whose lines are removed from the output.
    #[arg(long, num_args = 1..)]
    pub heldout: Vec<PathBuf>,
    /// Compare lines exactly (after NFC and trimming) when removing overlap.
    #[arg(long)]
    pub exact_overlap: bool,
    /// Keep a seeded random sample of this many lines.
    #[arg(long)]
    pub downsample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedInitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output embedding file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output vocabulary file.
    #[arg(long)]
    pub vocab_out: PathBuf,
    /// Existing vocabulary to extend instead of building a new one.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub epochs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to start from (required for finetune; resumes pretrain).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Write every checkpoint, not only the best and the last.
    #[arg(long)]
    pub save_all: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Average precision and recall per line instead of over the corpus.
    #[arg(long)]
    pub macro_average: bool,
    /// Also report the checkpoint's bits per character on the gold text.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Start every run from this checkpoint (fine-tuning sweep).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Grid preset, overriding the config's [sweep] section.
    #[arg(long)]
    pub preset: Option<String>,
    /// Runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let (seed, dry) = (cli.seed, cli.dry_run);
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a, seed.unwrap_or(0), dry),
        Command::Stats(a) => commands::stats(&a),
        Command::EmbedInit(a) => commands::embed_init(&a, seed.unwrap_or(0), dry),
        Command::Pretrain(a) => commands::train(&a, seed, dry, false),
        Command::Finetune(a) => commands::train(&a, seed, dry, true),
        Command::Segment(a) => commands::segment(&a, dry),
        Command::Evaluate(a) => commands::evaluate(&a, dry),
        Command::Sweep(a) => commands::sweep(&a, seed, dry),
        Command::Ladder(a) => ladder::ladder(&a, seed, dry),
    }
}
