//! `parelab`: synthetic data, training, evaluation and occlusion probing of
//! part-attention body regressors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use parelab_core::error::CoreError;

use crate::config::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "parelab", version, about, propagate_version = true)]
struct Cli {
    /// Worker threads; 1 gives bit-exact reproducibility of every output.
    #[arg(long, global = true, env = "PARELAB_THREADS", default_value_t = 1)]
    threads: usize,
    /// Overrides the seed of commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset to shards.
    GenData(commands::gen_data::Args),
    /// Train a network on a generated dataset.
    Train(commands::train::Args),
    /// Score a checkpoint on a dataset, clean and occluded.
    Eval(commands::eval::Args),
    /// Occlusion sensitivity maps and meshes of a checkpoint.
    Probe(commands::probe::Args),
    /// Render part-label images of the body model.
    RenderParts(commands::render_parts::Args),
    /// Write the part-branch attention maps of a checkpoint as PNGs.
    ExportAttention(commands::attention::Args),
    /// Summarize a dataset directory, checkpoint or run log.
    Inspect {
        /// Dataset directory, container file or `log.jsonl`.
        path: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(config::config_error("--threads must be ≥ 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(a, cli.seed),
        Command::Train(a) => commands::train::run(a, cli.seed),
        Command::Eval(a) => commands::eval::run(a),
        Command::Probe(a) => commands::probe::run(a),
        Command::RenderParts(a) => commands::render_parts::run(a, cli.seed),
        Command::ExportAttention(a) => commands::attention::run(a),
        Command::Inspect { path } => commands::inspect::run(&path),
    }
}

/// 2 for configuration problems, 3 for everything that fails at run time.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(CoreError::Config(_) | CoreError::HashMismatch { .. }) = cause.downcast_ref::<CoreError>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
