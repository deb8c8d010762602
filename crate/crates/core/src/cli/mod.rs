//! The `fairtab` command line.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, bad configuration),
//! 2 data error (unreadable or malformed input), 3 numeric error
//! (divergence, non-finite values).

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand};
use thiserror::Error;

pub use commands::{predictions_csv, read_predictions, Manifest};
pub use config::Hyper;

use crate::data::DataError;
use crate::fairness::FairnessError;
use crate::models::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FairnessError> for CliError {
    fn from(e: FairnessError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Usage(m),
            ModelError::Engine(e) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Data(e) => e.into(),
            TrainError::Model(e) => e.into(),
            TrainError::Fairness(e) => e.into(),
            d @ TrainError::Diverged { .. } => CliError::Numeric(d.to_string()),
        }
    }
}

const PRECEDENCE: &str = "Settings are resolved in this order: command-line flags, then the --config TOML file, then \
built-in defaults. The config file takes the long flag names in snake_case (batch_size = 64).";

#[derive(Debug, Parser)]
#[command(name = "fairtab", version, about = "Fairness-aware tabular classifiers and group-fairness audits")]
#[command(after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raw CSV and split it into training and test sets
    Prep {
        /// Raw data CSV
        #[arg(long)]
        data: PathBuf,
        /// Schema TOML file
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        schema: Option<PathBuf>,
        /// Use a built-in schema instead of --schema: law or student-math
        #[arg(long)]
        dataset: Option<String>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = crate::data::SplitSpec::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        /// Swap which sensitive values map to the unprivileged group
        #[arg(long)]
        invert_sensitive: bool,
    },
    /// Train one model on a prepared split and evaluate it on the test set
    #[command(after_help = PRECEDENCE)]
    Train {
        /// Directory written by `prep`
        #[arg(long)]
        split: PathBuf,
        /// TOML file with default hyperparameters
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the fairness report of a predictions CSV (score,label,group)
    Audit {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Model name echoed in the report
        #[arg(long, default_value = "external")]
        model: String,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every published model over several seeds and tabulate the results
    #[command(after_help = PRECEDENCE)]
    Reproduce {
        /// law or student-math
        #[arg(long)]
        dataset: String,
        /// Raw data CSV
        #[arg(long)]
        data: PathBuf,
        /// Exclude the sensitive attribute and train with the parity penalty
        #[arg(long, action = ArgAction::Set, value_name = "BOOL", default_value_t = false)]
        constrained: bool,
        /// Number of seeds, counting up from --seed
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Comma-separated subset of models
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<crate::models::ModelKind>>,
        #[arg(long, default_value_t = crate::data::SplitSpec::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        #[arg(long)]
        invert_sensitive: bool,
        /// Parallel training runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
        /// Directory for the table, run records and ABROCA panels
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot both groups' ROC curves and the area between them as SVG
    Roc {
        /// Predictions CSV (score,label,group)
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ROC by group")]
        title: String,
        /// Also write the curve points as CSV
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Write a synthetic stand-in for one of the datasets
    Synth {
        /// law or student-math
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
