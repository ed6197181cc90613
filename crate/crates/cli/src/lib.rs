//! `eegcpd` command-line pipeline: synthesize or ingest recordings, build
//! the population spectral tensor, pick a rank, decompose, project a cohort
//! and classify it. Each subcommand reads and writes artifacts in one work
//! directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::CliError;
use workspace::Workspace;

#[derive(Debug, Parser)]
#[command(
    name = "eegcpd",
    version,
    about = "Population EEG spectral tensor pipeline"
)]
pub struct Cli {
    /// TOML config file; unset fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set cpd.rank=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic spectra or EDF recordings with manifests.
    Synth,
    /// Manifests to population tensor, cohort tensor, band powers and labels.
    Preprocess,
    /// Rank histogram over repeated randomized fits.
    Diffit,
    /// Fit the CPD and write factors, topomaps and spectra.
    Decompose {
        /// Rank to fit; defaults to `cpd.rank`, then the DIFFIT modal rank.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Project cohort spectra onto the factor basis.
    Project,
    /// Cross-validated classification of cohort features.
    Classify,
    /// Collect artifacts into one summary.
    Report,
}

impl Cli {
    pub fn config(&self) -> Result<PipelineConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(d) = &self.work_dir {
            overrides.push(format!(
                "paths.work_dir={}",
                toml::Value::String(d.to_string_lossy().into_owned())
            ));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        PipelineConfig::resolve(self.config.as_deref(), &overrides)
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let ws = Workspace::open(cli.config()?)?;
    log::info!("work dir {}, config {}", ws.dir().display(), ws.config_hash);
    match &cli.command {
        Command::Synth => stages::synth(&ws),
        Command::Preprocess => stages::preprocess(&ws),
        Command::Diffit => stages::diffit(&ws),
        Command::Decompose { rank } => stages::decompose(&ws, *rank),
        Command::Project => stages::project(&ws),
        Command::Classify => stages::classify(&ws),
        Command::Report => stages::report(&ws),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
