//! Command-line harness: binds a TOML configuration to the basis, data,
//! fitting, evaluation, ensemble and report pipelines.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
//! Diagnostics go to standard error; results go to files under `--out`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;

pub use config::{parse_config, CliConfig};
pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "surrogate",
    version,
    about = "Build and benchmark operator surrogates for a parametric diffusion problem"
)]
pub struct Cli {
    /// TOML configuration; absent keys take the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Overrides every stage seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Start from the full-scale defaults instead of the desk-scale ones.
    #[arg(long, global = true)]
    pub full: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Build and store the input encoder and the H¹ output PCA basis.
    Basis,
    /// Generate a training dataset.
    Gen,
    /// Fit one surrogate from the `[fit]` section.
    #[command(visible_alias = "train")]
    Fit,
    /// Score the fitted surrogate on the shared test set.
    Eval,
    /// Run the configured ensemble and write all reports.
    Ensemble,
    /// Recompute Pareto and figure CSVs from a records file.
    Report {
        /// Records CSV (default: `<out>/records.csv`).
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Basis => "basis",
            Self::Gen => "gen",
            Self::Fit => "fit",
            Self::Eval => "eval",
            Self::Ensemble => "ensemble",
            Self::Report { .. } => "report",
        }
    }
}

/// Resolves the layered configuration for `cli`.
pub fn load_config(cli: &Cli) -> Result<CliConfig, CliError> {
    let base = if cli.full { CliConfig::full() } else { CliConfig::default() };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text, &base).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => base,
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let text = e.render().to_string();
                    eprint!("{text}");
                    if !text.contains("Usage:") {
                        eprintln!("\n{}", Cli::command().render_usage());
                    }
                    CliError::Usage(String::new()).exit_code()
                }
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Loads the configuration and runs the command inside a sized thread pool.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if cli.threads == Some(0) {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli, &cfg))
}
