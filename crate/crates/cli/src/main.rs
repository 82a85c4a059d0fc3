//! `deepfusion`: generate synthetic data, train, evaluate and inspect deep
//! fusion sentiment models.
//!
//! Settings merge in the order defaults < `--config` file < flags. The config
//! file is flat TOML using the flag names as keys, e.g. `batch-size = 20`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Split;
use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "deepfusion", version, about = "Deep fusion CNN for visual-textual sentiment")]
struct Cli {
    /// Flat TOML file of settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset: manifest.jsonl, embeddings.txt and images/.
    GenData {
        #[command(flatten)]
        settings: Overrides,
    },
    /// Train on a manifest; writes final.ckpt, best.ckpt, history.csv and run.json to --out.
    Train {
        #[command(flatten)]
        settings: Overrides,
    },
    /// Print "Prec. Rec. F1 Acc." for a checkpoint on a manifest.
    Eval {
        #[command(flatten)]
        settings: Overrides,
        /// Which samples to score; train and test repeat the split made by `train` with the same --seed.
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
    },
    /// Classify one image and text pair.
    Predict {
        #[command(flatten)]
        settings: Overrides,
        /// Binary PPM (P6) image.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Finite-difference check of every operation and the tiny models; fails on any mismatch.
    Gradcheck {
        #[command(flatten)]
        settings: Overrides,
        /// Random cases per operation.
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Render a training history CSV as a markdown table.
    Report {
        #[command(flatten)]
        settings: Overrides,
        /// History CSV [default: <out>/history.csv].
        #[arg(long)]
        history: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::GenData { settings } => commands::gen_data(&RunConfig::from_sources(file, settings)?),
        Command::Train { settings } => commands::train_cmd(&RunConfig::from_sources(file, settings)?),
        Command::Eval { settings, split } => commands::eval(&RunConfig::from_sources(file, settings)?, split),
        Command::Predict { settings, image, text } => {
            commands::predict(&RunConfig::from_sources(file, settings)?, &image, &text)
        }
        Command::Gradcheck { settings, trials } => {
            commands::gradcheck(&RunConfig::from_sources(file, settings)?, trials)
        }
        Command::Report { settings, history } => {
            commands::report(&RunConfig::from_sources(file, settings)?, history.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
