mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xcaps::data::Split;
use xcaps::Error;

#[derive(Parser)]
#[command(name = "xcaps", version, about = "Capsule-network fake news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for both model initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Routing iterations of the class-capsule layer.
    #[arg(long)]
    pub routing_iterations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history and metric reports.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for the metric CSVs (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one statement.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        /// Speaker credit counts: barely-true,false,half-true,mostly-true,pants-fire.
        #[arg(long, value_delimiter = ',', value_name = "COUNTS")]
        credit: Option<Vec<u32>>,
        /// Example id, required by models reading precomputed embeddings.
        #[arg(long, default_value = "input")]
        id: String,
    },
    /// Per-class frequent words and sentiment histograms.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Frequent words kept per class.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per routing iteration count with shared seeds.
    SweepRouting {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "r", value_delimiter = ',', default_value = "1,2,3")]
        r_values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export raw and normalized indirect features of one split.
    Features {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::HashMismatch { .. } => 3,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Config(_)
        | Error::Empty(_)
        | Error::Lookup(_)
        | Error::SequenceTooShort { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log_dir = match &cli.command {
        Command::Train { out, .. }
        | Command::Analyze { out, .. }
        | Command::SweepRouting { out, .. }
        | Command::Features { out, .. } => Some(out.clone()),
        Command::Eval { out, .. } => out.clone(),
        Command::Predict { .. } => None,
    };
    if let Err(e) = logging::init(log_dir.map(|d| d.join("xcaps.log")).as_deref()) {
        eprintln!("error: cannot open the log file: {e}");
        return ExitCode::from(2);
    }

    let result = match cli.command {
        Command::Train { cfg, out } => commands::train(&cfg, &out),
        Command::Eval {
            cfg,
            checkpoint,
            split,
            out,
        } => commands::eval(&cfg, &checkpoint, split, out.as_deref()),
        Command::Predict {
            cfg,
            checkpoint,
            text,
            credit,
            id,
        } => commands::predict(&cfg, &checkpoint, &id, &text, credit.as_deref()),
        Command::Analyze { cfg, split, k, out } => commands::analyze(&cfg, split, k, &out),
        Command::SweepRouting { cfg, r_values, out } => commands::sweep_routing(&cfg, &r_values, &out),
        Command::Features { cfg, split, out } => commands::features(&cfg, split, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
