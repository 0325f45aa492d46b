//! `din`: synthesize data, train, evaluate and inspect DenseImage networks.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error (bad config,
//! manifest, checkpoint or missing file), 3 selftest failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use din_core::Split;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "din", version, about = "DenseImage network training and analysis")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override values from the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, and for synthesis under `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic temporal-order dataset next to the manifest path.
    Synth,
    /// Train on the manifest's train split, validating on its val split.
    Train {
        /// Continue from a checkpoint instead of a fresh initialisation.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Loss and accuracy of the checkpoint on one split.
    Eval {
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Per-sample class and probabilities as CSV.
    Predict {
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write to this file instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parameter and FLOP accounting for the configured model shape.
    InspectParams,
    /// Per-window response intensities of one filter width.
    ExportResponses {
        #[arg(long)]
        width: usize,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        output: PathBuf,
    },
    /// Pooled multi-width features and frame-mean vectors per sample.
    ExportFeatures {
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the built-in oracle and gradient-check suites.
    Selftest,
}

/// Failure classes, each with its own exit status.
pub enum Failure {
    Validation(String),
    SelfTest(String),
}

impl From<din_core::Error> for Failure {
    fn from(e: din_core::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn effective_config(o: &Overrides, command: &Command) -> Result<RunConfig, Failure> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        match command {
            Command::Synth => cfg.synth.seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    if let Some(p) = &o.manifest {
        cfg.paths.manifest = p.clone();
    }
    if let Some(p) = &o.output_dir {
        cfg.paths.output_dir = p.clone();
    }
    if let Some(p) = &o.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    if let Some(e) = o.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.train.initial_lr = lr;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli.overrides, &cli.command)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train { resume } => commands::train(&cfg, resume.as_deref()),
        Command::Eval { split } => commands::eval(&cfg, split),
        Command::Predict { split, output } => commands::predict(&cfg, split, output.as_deref()),
        Command::InspectParams => commands::inspect_params(&cfg),
        Command::ExportResponses { width, split, output } => commands::export_responses(&cfg, width, split, &output),
        Command::ExportFeatures { split, output } => commands::export_features(&cfg, split, &output),
        Command::Selftest => commands::selftest(&cfg),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            eprintln!("din: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("din: {}", one_line(&m));
            ExitCode::from(2)
        }
        Err(Failure::SelfTest(m)) => {
            eprintln!("din: {}", one_line(&m));
            ExitCode::from(3)
        }
    }
}
