//! Command-line runner. Every command reads one TOML config, validates it,
//! writes the resolved config into a fresh run directory and then produces
//! its reports there.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

/// Environment variable overriding the default output root (`runs`).
pub const OUTPUT_ROOT_ENV: &str = "BUNDLENAS_OUTPUT_ROOT";

/// Name of the resolved config written into every run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "bundlenas", version, about = "Bundle-based hardware-aware architecture search at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Run directory; must be absent or empty. Defaults to a fresh
    /// `<root>/<command>-NNN`, where the root is `runs` or $BUNDLENAS_OUTPUT_ROOT.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Particle swarm search over bundle genomes.
    Search {
        #[command(flatten)]
        common: Common,
        /// Override the iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evaluation threads (0 = all cores). Results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train a network from a genome.
    Train {
        #[command(flatten)]
        common: Common,
        /// Genome TOML file, replacing the config's genome.
        #[arg(long)]
        genome: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-image IoU of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fold batch norms, quantize, and compare accuracy.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Analytic latency and resource estimate.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        genome: Option<PathBuf>,
    },
    /// Contest leaderboard from per-team result files.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Search { .. } => "search",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Quantize { .. } => "quantize",
            Command::Estimate { .. } => "estimate",
            Command::Score { .. } => "score",
            Command::GenData { .. } => "gen-data",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Search { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Quantize { common, .. }
            | Command::Estimate { common, .. }
            | Command::Score { common }
            | Command::GenData { common, .. } => common,
        }
    }
}

/// Marks an error as a usage/configuration problem (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        1
    } else {
        2
    }
}

/// Picks and creates the run directory.
pub fn prepare_run_dir(command: &str, out: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = match out {
        Some(p) => {
            if p.exists() && std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(true) {
                return Err(usage(format!("output directory {} is not empty", p.display())));
            }
            p.to_path_buf()
        }
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            (1..)
                .map(|n| root.join(format!("{command}-{n:03}")))
                .find(|p| !p.exists())
                .expect("unbounded search")
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    Ok(dir)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(&cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
