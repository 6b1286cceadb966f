mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use diwift::dataset::SynKind;
use diwift::ErrorKind;

/// Instance-wise influential feature selection for tabular classifiers.
#[derive(Debug, Parser)]
#[command(name = "diwift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the config-driven commands; they override the file.
#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration (all keys optional).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV plus a relevance sidecar.
    Gen {
        #[arg(long, default_value = "syn3")]
        kind: SynKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; the sidecar goes to `<out>.relevance`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base classifier on the training split.
    Pretrain(Common),
    /// Train the selector against influence under a pretrained model.
    Select {
        #[command(flatten)]
        common: Common,
        /// Pretrained model file written by `pretrain`.
        #[arg(long)]
        pretrained: PathBuf,
    },
    /// Full pipeline: pretrain, select, mask, retrain, evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// Keep every nonzero feature (reproduces the no-selection baseline).
        #[arg(long)]
        identity_mask: bool,
    },
    /// Seeded multi-run experiments.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
    /// Per-row selected features of a finished run against ground truth.
    ReportMask {
        #[command(flatten)]
        common: Common,
        /// Run directory written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Test-split rows to report (default: the first 20).
        #[arg(long, value_delimiter = ',')]
        rows: Vec<usize>,
    },
}

#[derive(Debug, Subcommand)]
enum ExperimentKind {
    /// Methods side by side over repeated seeds.
    Compare(Common),
    /// Train on a biased source, evaluate on an unbiased one.
    Shift(Common),
    /// DIWIFT with different pretraining checkpoints as influence source.
    Sensitivity(Common),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] diwift::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
                ErrorKind::Other => 1,
            },
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { kind, n, seed, out } => commands::gen(kind, n, seed, &out),
        Command::Pretrain(c) => commands::pretrain(&c),
        Command::Select { common, pretrained } => commands::select(&common, &pretrained),
        Command::Run {
            common,
            identity_mask,
        } => commands::run(&common, identity_mask),
        Command::Experiment { kind } => match kind {
            ExperimentKind::Compare(c) => commands::compare(&c),
            ExperimentKind::Shift(c) => commands::shift(&c),
            ExperimentKind::Sensitivity(c) => commands::sensitivity(&c),
        },
        Command::ReportMask { common, run, rows } => commands::report_mask(&common, &run, &rows),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
