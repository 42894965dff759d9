//! Command-line front end: `seafield <train|evaluate|ablate|reconstruct|synthesize>`.

pub mod commands;
pub mod config;
pub mod plot;

use clap::{Parser, Subcommand};
use commands::{CliError, CliResult, Context};
use config::ExperimentConfig;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "seafield", version, about = "Time-aware spatio-temporal forecasting experiments")]
pub struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Runs this single seed instead of the config's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Concurrent runs for multi-seed and ablation jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Root for relative data.path values.
    #[arg(long, env = "SEAFIELD_DATA_DIR", hide_env_values = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed.
    Train,
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run every ablation variant under every seed.
    Ablate,
    /// Fit coordinate MLPs to single series.
    Reconstruct,
    /// Write a synthetic dataset directory.
    Synthesize,
}

fn context(cli: &Cli) -> CliResult<Context> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(Context { config, jobs: cli.jobs, data_root: cli.data_dir.clone() })
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Train => commands::cmd_train(&ctx).map(|_| ()),
        Command::Evaluate { checkpoint } => commands::cmd_evaluate(&ctx, checkpoint, cli.config.is_some()).map(|_| ()),
        Command::Ablate => commands::cmd_ablate(&ctx),
        Command::Reconstruct => commands::cmd_reconstruct(&ctx),
        Command::Synthesize => commands::cmd_synthesize(&ctx),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("seafield: {e}");
            e.exit_code()
        }
    }
}
