//! `croplrp`: synthetic data, training, attribution, timeframes and the
//! pruning and earliness experiments, one subcommand per stage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A problem with the user's input rather than with the computation.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "croplrp", version, about = "Relevance-guided early crop classification")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every stage, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// No progress messages on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its spatial train/test split.
    GenData,
    /// Train a model.
    Train {
        /// Defaults to `<out>/train.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Accuracy, confusion matrix and per-class accuracies.
    Eval {
        /// Defaults to `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to `<out>/test.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Relevance maps, per-timestep relevance and the aggregated profile.
    Explain {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to `<out>/train.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Windows bounded by the top-n timesteps of a profile.
    Timeframe {
        /// Defaults to `<out>/profile.csv`.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Comma-separated window sizes; defaults to the configuration.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Targeted and random timestep pruning curves.
    PruneExp {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to `<out>/test.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Random-order trials; defaults to the configuration.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Retrain on each relevance window and compare accuracy with the full span.
    Earliness {
        /// Full dataset, split as in `gen-data`; defaults to `<out>/data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// SVG figures from the files of a run directory.
    Report {
        /// Defaults to `--out`.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Defaults to `<run>/data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// 1 for bad input, 2 for failures of the computation itself.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<croplrp::Error>() {
            return match e {
                croplrp::Error::Numeric { .. } | croplrp::Error::Training { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
