mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Diffusion-based multimodal trajectory prediction with Shapley feature
/// attribution.
#[derive(Debug, Parser)]
#[command(name = "trajex", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Base seed; overrides `seed` in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "TRAJEX_OUT_DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Grid {
    Encoder,
    Decoder,
}

/// Model source for attribution commands.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct PredictorArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the rule-based map-following reference predictor.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    GenData {
        /// Scenario family, comma-separated list, or `all`.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation dataset; training scenes are used when absent.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample joint predictions for every scene of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score saved predictions against a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Miss threshold in meters.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-scene Shapley attribution over the four feature groups.
    Explain {
        #[arg(long)]
        data: PathBuf,
        /// Explain only this scene.
        #[arg(long)]
        scene: Option<String>,
        #[command(flatten)]
        predictor: PredictorArgs,
        /// minSADE or minSFDE.
        #[arg(long)]
        metric: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Dataset-level feature importance.
    ExplainGlobal {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[arg(long)]
        metric: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate every configuration of an ablation grid.
    Ablate {
        #[arg(long, value_enum)]
        grid: Grid,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Exact entropy and mutual-information checks on built-in tables.
    InfoDemo {
        #[command(flatten)]
        common: Common,
    },
}

/// Failures detected by the command layer itself.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    IdMismatch(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::IdMismatch(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Message prefix for a runtime failure, chosen by its root cause.
fn prefix(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => "config error",
                CliError::IdMismatch(_) => "id mismatch",
            };
        }
        if let Some(e) = cause.downcast_ref::<trajex::Error>() {
            use trajex::Error as E;
            return match e {
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing file",
                E::Io { .. } => "io failure",
                E::Schema(_) => "schema mismatch",
                E::Parse { .. } => "malformed input",
                E::Config(_) => "config error",
                E::Checkpoint(_) => "bad checkpoint",
                E::NonFinite { .. } => "training diverged",
                _ => "runtime failure",
            };
        }
    }
    "runtime failure"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprint!("usage error: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e:#}", prefix(&e));
            ExitCode::from(2)
        }
    }
}
