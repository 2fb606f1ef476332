//! `peptrix` binary: train, evaluate, explain, and embed from the shell.
//!
//! Exit codes: 0 success (including help and version), 1 configuration or
//! usage problems, 2 data or artifact problems, 3 training failures. Every
//! failure prints one line on standard error. The `PEPTRIX_LOG` environment
//! variable (error|info|debug) controls log verbosity; anything else means
//! errors only.

mod commands;
mod config;
mod errors;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::errors::CliError;

#[derive(Parser)]
#[command(name = "peptrix", version, about = "Multimodal peptide activity classifier")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a classifier; writes model.ptrixmdl, history.csv, manifest.toml
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a labeled test set with a trained model
    Eval {
        /// Trained model snapshot
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Export attention maps and a ranked-residue report for one peptide
    Explain {
        /// Trained model snapshot
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        /// Peptide id, looked up in the train and test datasets
        #[arg(long)]
        id: String,
        /// Number of residues in the ranked report
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Precompute per-residue embeddings for a FASTA file
    Embed {
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() {
    init_logging();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("error: config: {}", line.trim().trim_start_matches("error: "));
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Cmd::Train { overrides } => commands::cmd_train(&RunConfig::load(overrides)?),
        Cmd::Eval { model, overrides } => commands::cmd_eval(&RunConfig::load(overrides)?, model),
        Cmd::Explain {
            model,
            id,
            k,
            overrides,
        } => commands::cmd_explain(&RunConfig::load(overrides)?, model, id, *k),
        Cmd::Embed { overrides } => commands::cmd_embed(&RunConfig::load(overrides)?),
    }
}

fn init_logging() {
    let level = match std::env::var("PEPTRIX_LOG").ok().as_deref() {
        Some("debug") => log::LevelFilter::Debug,
        Some("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Error,
    };
    env_logger::Builder::new().filter_level(level).init();
}
