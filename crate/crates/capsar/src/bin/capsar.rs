//! Thin command-line front end: argument parsing and dispatch only; all
//! behavior lives in the library's `cli` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use capsar::cli::{cmd_detect, cmd_eval, cmd_gradcheck, cmd_train, DataFormat, RunConfig};
use capsar::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "capsar",
    about = "Capsule-network aspect-term sentiment analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run-config file
    Train {
        /// Run-config file (flat key = value lines)
        config: PathBuf,
        /// Override the config's epoch count
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config's batch size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's learning rate
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's embeddings file
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus
    Eval {
        /// Checkpoint file
        model: PathBuf,
        /// Corpus file
        data: PathBuf,
        /// Corpus format: xml or tsv
        #[arg(long, default_value = "xml")]
        format: String,
        /// Where to write the metric,class,value CSV
        #[arg(long, default_value = "eval.csv")]
        csv: PathBuf,
    },
    /// Detect aspect terms with a trained checkpoint
    Detect {
        /// Checkpoint file
        model: PathBuf,
        /// Corpus file
        data: PathBuf,
        /// Corpus format: xml or tsv
        #[arg(long, default_value = "xml")]
        format: String,
        /// Capsule activation threshold
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Words to print per active capsule
        #[arg(long = "topk", default_value_t = 5)]
        top_k: usize,
        /// Write a per-sentence cosine-score CSV here
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Check tape gradients against finite differences on a tiny model
    Gradcheck {
        /// Use the built-in miniature configuration (the default and only
        /// mode; the sweep is only tractable at this scale)
        #[arg(long)]
        toy_config: bool,
    },
}

fn parse_format(value: &str) -> Result<DataFormat> {
    DataFormat::parse(value)
        .ok_or_else(|| Error::Config(format!("format must be xml or tsv, got \"{value}\"")))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            epochs,
            batch_size,
            seed,
            learning_rate,
            out,
            embeddings,
        } => {
            let mut run_config = RunConfig::from_file(&config)?;
            if let Some(value) = epochs {
                run_config.epochs = value;
            }
            if let Some(value) = batch_size {
                run_config.batch_size = value;
            }
            if let Some(value) = seed {
                run_config.seed = value;
            }
            if let Some(value) = learning_rate {
                run_config.learning_rate = value;
            }
            if let Some(value) = out {
                run_config.out = value;
            }
            if let Some(value) = embeddings {
                run_config.embeddings = Some(value);
            }
            cmd_train(&run_config)?;
            Ok(true)
        }
        Command::Eval {
            model,
            data,
            format,
            csv,
        } => {
            cmd_eval(&model, &data, parse_format(&format)?, &csv)?;
            Ok(true)
        }
        Command::Detect {
            model,
            data,
            format,
            threshold,
            top_k,
            heatmap,
        } => {
            cmd_detect(
                &model,
                &data,
                parse_format(&format)?,
                threshold,
                top_k,
                heatmap.as_deref(),
            )?;
            Ok(true)
        }
        Command::Gradcheck { toy_config: _ } => cmd_gradcheck(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
