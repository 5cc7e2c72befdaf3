use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use popsynth_cli::commands;
use popsynth_cli::{CliError, ExperimentConfig};

const ENV_HELP: &str = "Environment:
  POPSYNTH_OUTPUT_DIR  overrides output_dir
  POPSYNTH_WORKERS     overrides workers (parallel grid cells)";

#[derive(Parser)]
#[command(name = "popsynth", version, about = "Population synthesis experiments", after_help = ENV_HELP)]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the ground-truth population.
    SynthData,
    /// Draw the training sample from the population.
    Split,
    /// Train the masked-attribute embedder on the sample.
    TrainEmbedder,
    /// Train grid cells.
    Train {
        /// Only this cell.
        #[arg(long)]
        cell: Option<String>,
    },
    /// Generate records from one trained cell.
    Generate {
        #[arg(long)]
        cell: String,
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate every grid cell against the population.
    Evaluate,
    /// Sensitivity sweep over a regularizer weight.
    Sweep,
    /// Coverage and recall-vs-size tables.
    Curves,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let config = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    Ok(match cli.command {
        Command::SynthData => {
            serde_json::json!({ "population": commands::cmd_synth_data(&config)? })
        }
        Command::Split => {
            serde_json::to_value(commands::cmd_split(&config)?).expect("plain struct")
        }
        Command::TrainEmbedder => {
            commands::cmd_train_embedder(&config)?;
            serde_json::json!({ "embedder": commands::Layout::new(&config).embedder() })
        }
        Command::Train { cell } => {
            serde_json::json!({ "artifacts": commands::cmd_train(&config, cell.as_deref())? })
        }
        Command::Generate { cell, n, seed, out } => {
            let rows = commands::cmd_generate(&config, &cell, n, seed, &out)?;
            serde_json::json!({ "rows": rows, "out": out })
        }
        Command::Evaluate => {
            let reports = commands::cmd_evaluate(&config)?;
            serde_json::json!({ "table": commands::Layout::new(&config).table(), "cells": reports.len() })
        }
        Command::Sweep => {
            let rows = commands::cmd_sweep(&config)?;
            serde_json::json!({ "sweep": commands::Layout::new(&config).sweep(), "rows": rows.len() })
        }
        Command::Curves => {
            commands::cmd_curves(&config)?;
            serde_json::json!({ "curves": commands::Layout::new(&config).root.join("curves") })
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
