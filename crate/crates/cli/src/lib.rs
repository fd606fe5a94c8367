//! Command-line driver: `solve`, `check`, `infconv-table`, `sweep` and
//! `diagnose`.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 solver failure
//! or unconverged verdict, 4 certificate violation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfg_core::MfgError;
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::{load_config, parse_config, Profile, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;
pub const EXIT_CERTIFICATE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Core(#[from] MfgError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                MfgError::InvalidParameter(_) | MfgError::GridMismatch(_) | MfgError::NonFinite(_) | MfgError::NotApplicable { .. } => EXIT_USAGE,
                _ => EXIT_UNCONVERGED,
            },
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfg", version, about = "Stationary mean-field games on the torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides both Hamilton-Jacobi tolerances of the verdict.
    #[arg(long = "tol-hj", global = true)]
    pub tol_hj: Option<f64>,

    /// Overrides the transport tolerance of the verdict.
    #[arg(long = "tol-transport", global = true)]
    pub tol_transport: Option<f64>,

    /// Overrides the number of continuation stages.
    #[arg(long, global = true)]
    pub stages: Option<usize>,

    /// Only log warnings and errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Configuration file (JSON).
    #[arg(value_name = "CONFIG", conflicts_with = "config_flag")]
    pub config: Option<PathBuf>,

    #[arg(long = "config", value_name = "CONFIG")]
    pub config_flag: Option<PathBuf>,
}

impl ConfigArg {
    pub fn path(&self) -> Option<&PathBuf> {
        self.config.as_ref().or(self.config_flag.as_ref())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the continuation and writes the report and fields.
    Solve(ConfigArg),
    /// Samples the structural certificates of the Hamiltonian.
    Check(ConfigArg),
    /// Tabulates the envelope against a brute-force oracle.
    InfconvTable(ConfigArg),
    /// Solves on every (n, ε) pair of the sweep section.
    Sweep(ConfigArg),
    /// Evaluates the residuals of a stored state.
    Diagnose {
        #[arg(long = "config", value_name = "CONFIG")]
        config: Option<PathBuf>,
        /// Density CSV as written by `solve`.
        m_csv: PathBuf,
        /// Value function CSV as written by `solve`.
        u_csv: PathBuf,
        /// ε used for the regularized residuals (0 gives the original system).
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
}

/// Loads the configuration and applies the global overrides.
pub fn resolve_config(path: Option<&PathBuf>, global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(t) = global.tol_hj {
        cfg.schedule.tolerances.hj_pos = t;
        cfg.schedule.tolerances.hj_support = t;
    }
    if let Some(t) = global.tol_transport {
        cfg.schedule.tolerances.transport_l1 = t;
    }
    if let Some(s) = global.stages {
        cfg.schedule.stages = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_target(false).try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.global.quiet);
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
