//! Configuration-driven front end for the `bikeshare` library.
//!
//! Every subcommand reads one TOML document, applies command-line
//! overrides, and writes CSV tables (plus optional SVG plots) into the
//! output directory.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] bikeshare::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// Some requested points failed or did not converge. Outputs were
    /// still written.
    #[error("{0}")]
    Incomplete(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Incomplete(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bikeshare",
    version,
    about = "Mean-field analysis of bike-sharing systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the environment (W, theta, lambda, mu) from the configuration.
    EnvBuild,
    /// Solve the stationary fixed point and report performance measures.
    FixedPoint,
    /// Integrate the mean-field equations over [0, t_end].
    Integrate,
    /// Run the stochastic simulator.
    Simulate,
    /// Solve the fixed point over a Cartesian parameter grid.
    Sweep,
    /// Fixed point, ODE steady state and simulation side by side.
    Compare,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EnvBuild => "env-build",
            Self::FixedPoint => "fixed-point",
            Self::Integrate => "integrate",
            Self::Simulate => "simulate",
            Self::Sweep => "sweep",
            Self::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Standard,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

/// Flags override the corresponding configuration fields.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Configuration document (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory [config: output.dir].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Generator assembly mode [config: solver.mode].
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Master seed [config: simulation.seed].
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Emit SVG plots [config: output.plots].
    #[arg(long, global = true, value_enum)]
    pub plots: Option<Switch>,
}

impl Flags {
    pub fn apply(&self, cfg: &mut Config) {
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        if let Some(m) = self.mode {
            cfg.solver.mode = match m {
                ModeArg::Standard => "standard",
                ModeArg::PaperLiteral => "paper-literal",
            }
            .into();
        }
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(p) = self.plots {
            cfg.output.plots = p == Switch::On;
        }
    }
}

/// Load, override and dispatch.
pub fn run(command: Command, flags: &Flags) -> Result<(), CliError> {
    let path = flags
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = Config::load(path)?;
    flags.apply(&mut cfg);
    if let Some(n) = flags.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    commands::dispatch(command, &cfg)
}
