//! `obq` command line: synth, extract, select, train, evaluate, transfer, run.

pub mod commands;
pub mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::Overrides;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running a valid configuration; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "obq", version, about = "Orderbook features, L1 quantile selection and quantile models for ID3 forecasting")]
pub struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trade CSV from the [synth] section.
    Synth(Common),
    /// Build samples (384 features + ID3) and the drop report.
    Extract(Common),
    /// L1 quantile selection and the top-k table.
    Select(Common),
    /// Hyperparameter search and one checkpoint per seed.
    Train(Common),
    /// Test metrics of the trained checkpoints.
    Evaluate(Common),
    /// Cross-domain strategies and the (C, L) scatter.
    Transfer(Common),
    /// Every stage in order.
    Run(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub workspace: Option<String>,
    #[arg(long)]
    pub trades: Option<String>,
    /// Time zone of naive timestamps in inputs and the config.
    #[arg(long)]
    pub tz: Option<String>,
    #[arg(long)]
    pub market: Option<String>,
    #[arg(long)]
    pub product_type: Option<String>,
    #[arg(long)]
    pub train_end: Option<String>,
    #[arg(long)]
    pub val_end: Option<String>,
    #[arg(long)]
    pub test_end: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    /// top<k>, full, naive1 or naive2.
    #[arg(long)]
    pub feature_set: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Comma-separated model seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Fixed selection penalty instead of validation tuning.
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            workspace: self.workspace.clone(),
            trades: self.trades.clone(),
            timezone: self.tz.clone(),
            market: self.market.clone(),
            product_type: self.product_type.clone(),
            train_end: self.train_end.clone(),
            val_end: self.val_end.clone(),
            test_end: self.test_end.clone(),
            family: self.family.clone(),
            feature_set: self.feature_set.clone(),
            budget: self.budget,
            seeds: self.seeds.clone(),
            alpha: self.alpha,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("obq: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs: must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(CliError::runtime)?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    let (common, f): (&Common, fn(&config::Resolved) -> Result<(), CliError>) = match cmd {
        Command::Synth(c) => (c, commands::synth),
        Command::Extract(c) => (c, commands::extract),
        Command::Select(c) => (c, commands::select),
        Command::Train(c) => (c, commands::train),
        Command::Evaluate(c) => (c, commands::evaluate),
        Command::Transfer(c) => (c, commands::transfer),
        Command::Run(c) => (c, commands::run_all),
    };
    let resolved = config::load(&common.config, &common.overrides())?;
    f(&resolved)
}
