//! Command-line pipeline: simulate, label, train, evaluate, analyze,
//! compare and report, all driven by one JSON configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use icu_policy::model::Precision;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Double,
}

#[derive(Debug, Parser)]
#[command(name = "icu-policy", version, about = "ICU mortality risk and intervention policy pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Train with this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or ingest) the cohort and assign splits.
    Simulate,
    /// Derive labels and build the vocabulary.
    Label,
    /// Train the recurrent model for every seed and fit the baselines.
    Train,
    /// Score the test split and write the metric tables.
    Evaluate,
    /// Cluster and embed the intervention predictions.
    Analyze,
    /// Compare the predictions for two stays.
    Compare { id_a: String, id_b: String },
    /// Write report.md from the evaluation outputs.
    Report,
}

impl Cli {
    /// Configuration file plus command-line overrides, validated.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            config.io.out_dir = out.clone();
        }
        if let Some(p) = self.precision {
            config.precision = match p {
                PrecisionArg::Single => Precision::Single,
                PrecisionArg::Double => Precision::Double,
            };
        }
        if self.threads == 0 {
            return Err(CliError::Config("`--threads` must be at least 1".into()));
        }
        config.validate()?;
        Ok(config)
    }
}

/// Runs one command on a pool of `cli.threads` workers.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = cli.resolve_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_command(&cli.command, &config))
}

pub fn run_command(command: &Command, config: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Simulate => commands::simulate(config).map(drop),
        Command::Label => commands::label(config).map(drop),
        Command::Train => commands::train_models(config).map(drop),
        Command::Evaluate => commands::evaluate(config).map(drop),
        Command::Analyze => commands::analyze(config).map(drop),
        Command::Compare { id_a, id_b } => commands::compare(config, id_a, id_b).map(drop),
        Command::Report => commands::report(config).map(drop),
    }
}

/// The full pipeline from simulation to the report.
pub fn run_all(config: &RunConfig) -> Result<(), CliError> {
    for command in [
        Command::Simulate,
        Command::Label,
        Command::Train,
        Command::Evaluate,
        Command::Analyze,
        Command::Report,
    ] {
        run_command(&command, config)?;
    }
    Ok(())
}
