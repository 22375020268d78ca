//! Command-line pipeline for panoramic-radiograph dataset engineering:
//! preprocessing, stratified splitting, augmentation, tooth-bank synthesis,
//! prediction scoring, and rule-based post-processing, with seeded
//! determinism and per-run manifests.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "panodent",
    version,
    about = "Dataset pipeline for tooth detection on panoramic radiographs"
)]
struct Cli {
    /// JSON pipeline config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-image parallelism (0 = auto).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Suppress non-error output.
    #[arg(long, global = true)]
    quiet: bool,

    /// Print extra progress detail.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equalize, crop, pad, and resize a dataset to the working resolution.
    Preprocess(commands::PreprocessArgs),
    /// Stratified train/validation/test split.
    Split(commands::SplitArgs),
    /// Annotation-aware geometric/photometric augmentation.
    Augment(commands::AugmentArgs),
    /// Extract a tooth bank from an annotated dataset.
    Bank(commands::BankArgs),
    /// Generate annotated panoramics from a tooth bank and empty panoramics.
    Synthesize(commands::SynthesizeArgs),
    /// Score a prediction file against ground truth.
    Evaluate(commands::EvaluateArgs),
    /// Quadrant correction and duplicate suppression on predictions.
    Postprocess(commands::PostprocessArgs),
    /// Metric deltas between two evaluation reports.
    Compare(commands::CompareArgs),
    /// Matching-loss breakdown for a (ground truth, predictions) pair.
    Loss(commands::LossArgs),
}

#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub threads: usize,
    pub quiet: bool,
    pub verbose: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let threads = if cli.threads > 0 {
        cli.threads
    } else {
        cfg.threads.unwrap_or(0)
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let globals = Globals {
        seed: cli.seed.or(cfg.seed),
        threads,
        quiet: cli.quiet,
        verbose: cli.verbose,
    };

    match cli.command {
        Command::Preprocess(args) => commands::preprocess(args, &cfg, globals),
        Command::Split(args) => commands::split(args, &cfg, globals),
        Command::Augment(args) => commands::augment(args, &cfg, globals),
        Command::Bank(args) => commands::bank(args, &cfg, globals),
        Command::Synthesize(args) => commands::synthesize(args, &cfg, globals),
        Command::Evaluate(args) => commands::evaluate(args, &cfg, globals),
        Command::Postprocess(args) => commands::postprocess(args, &cfg, globals),
        Command::Compare(args) => commands::compare(args, &cfg, globals),
        Command::Loss(args) => commands::loss(args, &cfg, globals),
    }
}
