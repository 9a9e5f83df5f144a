//! Command-line driver for the voltshm pipeline.
//!
//! Output layout under `--out`:
//!
//! ```text
//! signals/<condition>/          simulate
//! ensembles/<condition>/        identify (ensemble.json + model_<i>.json)
//! convergence/<condition>.csv   identify
//! relations.json                identify
//! report/                       detect (report.json, rates.csv, ...)
//! roc/                          roc (roc_<kind>.csv, auc.csv)
//! ```
//!
//! Conditions are `reference_train`, `reference_test` and `alpha_<a>` for
//! each damaged severity.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
mod output;

pub use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "voltshm",
    version,
    about = "Stochastic Volterra identification and damage detection"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "voltshm-out")]
    pub out: PathBuf,
    /// Use 2048 realizations per condition instead of the desk-scale default.
    #[arg(long, global = true)]
    pub full: bool,
    /// Stochastic plant spec (JSON); overrides the config file.
    #[arg(long, global = true)]
    pub plant: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate input/output records for every condition.
    Simulate,
    /// Identify one model ensemble per condition.
    Identify {
        /// Simulate in memory instead of reading `signals/`.
        #[arg(long)]
        inline: bool,
    },
    /// Detection rates, thresholds and distances from existing ensembles.
    Detect,
    /// ROC curves and AUC from existing ensembles.
    Roc,
    /// Identify, detect and ROC for the full condition grid.
    ReproducePaper,
    /// Fit pole relations on the nominal plant at each severity.
    FitRelations,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what} not found; expected:\n{}", list_paths(.paths))]
    Missing { what: String, paths: Vec<PathBuf> },
    #[error(transparent)]
    Core(#[from] voltshm::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Missing { .. } => 2,
            CliError::Core(e) if e.is_config_error() => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 1,
        }
    }
}

fn list_paths(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| format!("  {}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Resolved settings shared by all commands.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub full: bool,
}

impl Context {
    pub fn from_args(common: &CommonArgs) -> Result<Self, CliError> {
        let mut config = match &common.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(plant) = &common.plant {
            config.plant = Some(plant.clone());
        }
        config.validate()?;
        if common.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        Ok(Context {
            config,
            out: common.out.clone(),
            full: common.full,
        })
    }

    pub fn n_realizations(&self) -> usize {
        self.config.realizations(self.full)
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::from_args(&cli.common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.common.jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Identify { inline } => commands::identify(&ctx, inline),
        Command::Detect => commands::detect(&ctx),
        Command::Roc => commands::roc(&ctx),
        Command::ReproducePaper => commands::reproduce_paper(&ctx),
        Command::FitRelations => commands::fit_relations(&ctx),
    })
}
