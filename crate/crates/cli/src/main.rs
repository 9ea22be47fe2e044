//! `hgnn`: data generation, graph building, training, evaluation and the
//! structural tier comparison.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, flag values or config files (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "hgnn", version, about = "Hierarchical graph matching of device browsing logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs/latest")]
    pub out: PathBuf,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Coarse subgroup size [default: 6].
    #[arg(long = "K", global = true)]
    pub k: Option<usize>,
    /// Embedding width [default: 64].
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Learning rate [default: 1e-3].
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Pairs per mini-batch [default: 32].
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Training epochs [default: 20].
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Dropout rate [default: 0.2].
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Random-walk length of the shortcut tier [default: 4].
    #[arg(long = "walk-len", global = true)]
    pub walk_len: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus: logs.jsonl, pairs.csv, devices.csv.
    GenData {
        /// Number of users.
        #[arg(long)]
        users: Option<usize>,
        /// Devices per user.
        #[arg(long)]
        devices: Option<usize>,
        /// Cross-device divergence in [0, 1].
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Build hierarchical graphs and write per-device statistics.
    BuildGraph {
        #[arg(long)]
        logs: PathBuf,
    },
    /// Train a model; writes model.ckpt and loss_history.csv.
    Train {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Labelled validation pairs, evaluated after every epoch.
        #[arg(long)]
        val_pairs: Option<PathBuf>,
        /// Hold out this fraction of users from --pairs for validation.
        #[arg(long, conflicts_with = "val_pairs")]
        holdout: Option<f64>,
    },
    /// Evaluate a checkpoint on labelled pairs (threshold sweep, PR curve).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Logs of the devices named in --pairs.
        #[arg(long)]
        logs: PathBuf,
    },
    /// Compare coarse-membership and random-walk shortcut edge counts.
    CompareTiers {
        #[arg(long)]
        logs: PathBuf,
        /// Walks started from each fine node.
        #[arg(long, default_value_t = 1)]
        walks_per_node: usize,
        /// Also time one forward pass over each tier.
        #[arg(long)]
        time: bool,
    },
    /// Score device pairs with a checkpoint; writes scores.csv.
    ScorePairs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        logs: PathBuf,
        /// Average both pair orders.
        #[arg(long)]
        symmetric: bool,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<hgnn_core::Error>() {
            return match e {
                hgnn_core::Error::NumericalAbort(_) => 3,
                hgnn_core::Error::Config(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HGNN_LOG_LEVEL", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
