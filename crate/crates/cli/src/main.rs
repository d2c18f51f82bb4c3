mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Tunables;

#[derive(Parser, Debug)]
#[command(name = "rtar", version, about = "Three-stream action recognition: preprocessing, training, evaluation and real-time runs")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "RTAR_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    tunables: Tunables,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Precompute flow and HOG files for every clip directory under `--clips`.
    Preprocess {
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train section of `<data>/split.txt`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the loss history goes to `<out>.loss.tsv`.
        #[arg(long)]
        out: PathBuf,
        /// Cache directory written by `preprocess`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Clip-level accuracy report on the test section of `<data>/split.txt`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Evaluate the train section instead.
        #[arg(long)]
        train_split: bool,
    },
    /// Classify a clip and print the event log to standard output.
    Run {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// Pace the clip on the wall clock (not reproducible).
        #[arg(long)]
        live: bool,
    },
    /// Dataset tooling.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Per-stage latency table.
    Bench,
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Check a split manifest for bad names and overlap.
    Validate {
        #[arg(long)]
        split: PathBuf,
        /// Also require the full-dataset counts.
        #[arg(long)]
        full: bool,
    },
    /// Group-disjoint split of the clip directories under `--clips`.
    Split {
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the synthetic fine-grained set into `--out`.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure reported with exit code 2: bad flags, settings or inputs
/// that violate a documented precondition.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<UsageError>() {
        return 2;
    }
    match err.downcast_ref::<rtar_core::Error>() {
        Some(rtar_core::Error::Contract(_) | rtar_core::Error::Split(_) | rtar_core::Error::Name(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let reason = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {reason}");
            ExitCode::from(exit_code(&e))
        }
    }
}
