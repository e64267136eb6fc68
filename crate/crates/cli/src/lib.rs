//! Command implementations behind the `nanode` binary.

pub mod commands;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] nanode::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Core(e) if e.is_divergence() => 3,
            CliError::Io(_) | CliError::Core(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nanode", version, about = "Non-autonomous neural ODE experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, checkpoint and summary.
    Train(Common),
    /// Compare discrete, adjoint and finite-difference derivatives.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Test hook: perturb the parameter Jacobian before comparing.
        #[arg(long, hide = true)]
        corrupt_jac_theta: bool,
    },
    /// Sensitivity, transition-matrix and weight-norm series.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Analyse trained parameters instead of the initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time Householder-chain products against dense matvecs.
    Orthobench {
        #[command(flatten)]
        common: Common,
        #[arg(long = "n", default_value_t = 64)]
        n: usize,
        #[arg(long = "d", default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 1000)]
        repeats: usize,
    },
    /// Write the configured task's train and test splits to CSV.
    Datagen(Common),
}

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let quiet = match &cli.command {
        Command::Train(c) | Command::Datagen(c) => c.quiet,
        Command::Gradcheck { common, .. } | Command::Stability { common, .. } | Command::Orthobench { common, .. } => {
            common.quiet
        }
    };
    let result = match cli.command {
        Command::Train(c) => commands::train::run(&c),
        Command::Gradcheck {
            common,
            corrupt_jac_theta,
        } => commands::gradcheck::run(&common, corrupt_jac_theta),
        Command::Stability { common, checkpoint } => commands::stability::run(&common, checkpoint.as_deref()),
        Command::Orthobench { common, n, d, repeats } => commands::orthobench::run(&common, n, d, repeats),
        Command::Datagen(c) => commands::datagen::run(&c),
    };
    match result {
        Ok(report) => {
            if !quiet {
                print!("{report}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
