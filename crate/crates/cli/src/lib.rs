//! Command-line driver: ingest leader profiles, train the TD3 agent,
//! evaluate TD3, HCFS and AK-HCFS over every AV/HV mix, replay single
//! episodes and re-render reports.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use akhcfs_core::experiment::Algorithm;
use akhcfs_core::Error;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidParameter(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_NUMERIC,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "akhcfs", version, about = "Car-following experiments with TD3, HCFS and AK-HCFS controllers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract leader profiles and write the train/test split as JSON.
    Ingest,
    /// Train the TD3 agent inside the selected strategy.
    Train,
    /// Evaluate every algorithm over all test events and mixes.
    Evaluate,
    /// Run one episode with full logs and per-decision diagnostics.
    Replay,
    /// Re-render tables and plots from an existing report.json.
    Report,
}

#[derive(Debug, Default, clap::Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for evaluation episodes (outputs do not depend on it).
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Strategy for train/replay; restricts evaluate to this one algorithm.
    #[arg(long, global = true, value_name = "td3|hcfs|akhcfs")]
    pub algo: Option<Algorithm>,
    /// Use generated leader profiles instead of trajectory data.
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Trajectory CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Follower mix such as HAAA (H = human, A = autonomous).
    #[arg(long, global = true, value_name = "STRING")]
    pub mix: Option<String>,
    /// Training episode budget; lifts the step budget unless --steps is given.
    #[arg(long, global = true, value_name = "N")]
    pub episodes: Option<u64>,
    /// Training environment-step budget.
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<u64>,
    /// Checkpoint path.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Event id for replay.
    #[arg(long, global = true, value_name = "ID")]
    pub event: Option<String>,
    /// Print the fully resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Print the JSON schema of the configuration file and exit.
    #[arg(long, global = true)]
    pub print_schema: bool,
}

impl Overrides {
    /// Configuration file (or defaults) with the flags applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(out) = &self.out {
            c.paths.output = out.clone();
        }
        if let Some(algo) = self.algo {
            c.algorithm = algo;
            c.eval.algorithms = vec![algo];
        }
        if self.synthetic {
            c.data.synthetic = true;
        }
        if let Some(data) = &self.data {
            c.paths.data = Some(data.clone());
        }
        if let Some(mix) = &self.mix {
            c.eval.mix = Some(mix.clone());
        }
        if let Some(episodes) = self.episodes {
            c.train.episodes = Some(episodes);
            if self.steps.is_none() {
                c.train.steps = None;
            }
        }
        if let Some(steps) = self.steps {
            c.train.steps = Some(steps);
        }
        if let Some(checkpoint) = &self.checkpoint {
            c.paths.checkpoint = Some(checkpoint.clone());
        }
        if let Some(event) = &self.event {
            c.eval.event = Some(event.clone());
        }
        if self.jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        c.validate()?;
        Ok(c)
    }
}

/// The clap command with the configuration key listing appended to `--help`.
pub fn command() -> clap::Command {
    Cli::command().after_long_help(config::keys_help()).after_help(config::keys_help())
}

/// Run `akhcfs` with `args` (including the program name) and return the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.overrides.print_schema {
        print!("{}", config::schema_json());
        return Ok(());
    }
    let config = cli.overrides.resolve()?;
    if cli.overrides.print_config {
        print!("{}", config.to_json());
        return Ok(());
    }
    log::info!("{:?} with seed {}", cli.command, config.seed);
    match cli.command {
        Command::Ingest => commands::ingest(&config),
        Command::Train => commands::train_cmd(&config),
        Command::Evaluate => commands::evaluate_cmd(&config, cli.overrides.jobs).map(|_| ()),
        Command::Replay => commands::replay_cmd(&config).map(|_| ()),
        Command::Report => commands::report_cmd(&config).map(|_| ()),
    }
}
