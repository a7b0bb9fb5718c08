//! `cohortcast`: cohort synthesis, feature building, training, scoring,
//! and evaluation from the command line.
//!
//! Every run writes a `<command>.manifest.json` beside its primary output
//! recording the resolved parameters and the sha256 of each input and
//! output. Manifests carry no timestamps, so rerunning a command with the
//! same inputs reproduces every artifact byte for byte.
//!
//! Exit codes: 0 on success, 1 on any operational failure, 2 on usage
//! errors (unknown flags, missing subcommand).

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cohortcast", version, about, max_term_width = 100)]
struct Cli {
    /// Optional TOML config; each command reads its own [section].
    /// Flags always win over config values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (visits, attributes, labels, truth)
    Synth(commands::synth::Args),
    /// Build per-patient feature vectors from visits and attributes
    Features(commands::features::Args),
    /// Render per-patient text prompts
    Prompts(commands::prompts::Args),
    /// Assign train/validation/test partitions, optionally downsampling
    Split(commands::split::Args),
    /// Grid-search an elastic-net baseline and score the test partition
    Train(commands::train::Args),
    /// Validate and canonicalize externally produced scores
    Ingest(commands::ingest::Args),
    /// Discrimination and risk-tier report with bootstrap intervals
    Evaluate(commands::evaluate::Args),
    /// Subgroup metrics, heterogeneity tests, and gap summary
    Fairness(commands::fairness::Args),
    /// Compare the three representations on reseeded planted cohorts
    Ablate(commands::ablate::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match config::Config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args, &config),
        Command::Features(args) => commands::features::run(args, &config),
        Command::Prompts(args) => commands::prompts::run(args, &config),
        Command::Split(args) => commands::split::run(args, &config),
        Command::Train(args) => commands::train::run(args, &config),
        Command::Ingest(args) => commands::ingest::run(args, &config),
        Command::Evaluate(args) => commands::evaluate::run(args, &config),
        Command::Fairness(args) => commands::fairness::run(args, &config),
        Command::Ablate(args) => commands::ablate::run(args, &config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
