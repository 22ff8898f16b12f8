//! Batch front end: `prepare`, `fit`, `diagnose` and `simulate`, each driven
//! by one TOML run config and leaving a manifest next to its outputs.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::{LoadedConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "rem", version, about = "Relational event models of species invasions")]
pub struct Cli {
    /// Worker threads for likelihood evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load inputs, repair panels and write the normalized cache.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the configured model(s) to the prepared cache.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Residuals, proportional-hazards test and correlations of a fit.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        /// Fit directory or its fit.json; the configured fit by default.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repeat the run recorded in a manifest.
    Rerun { manifest: PathBuf },
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Prepare { config } => commands::cmd_prepare(&LoadedConfig::read(&config)?),
        Command::Fit { config } => commands::cmd_fit(&LoadedConfig::read(&config)?),
        Command::Diagnose { config, fit } => commands::cmd_diagnose(&LoadedConfig::read(&config)?, fit.as_deref()),
        Command::Simulate { config } => commands::cmd_simulate(&LoadedConfig::read(&config)?),
        Command::Rerun { manifest } => commands::cmd_rerun(&manifest),
    }
}

/// 2 for numerical failures of the estimator, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<rem_core::Error>().is_some_and(rem_core::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}
