//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::{self, SwapSource, VizSource};
use crate::error::{CliError, CliResult};
use crate::settings::{keys_help, Settings};

const EXIT_CODES: &str = "Exit status:
  0  success
  1  any other failure
  2  usage or configuration error
  3  missing or unreadable checkpoint
  4  malformed or missing dataset / input clip
  5  output location not writable";

#[derive(Debug, Parser)]
#[command(name = "headswap", version, about = "Mask-free video head swapping at desk scale")]
pub struct Cli {
    /// Flat `key = value` config file applied over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root seed; same as `--set seed=N`, applied last.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    GenData {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser; writes checkpoint.bin and appends to train_log.csv in OUT.
    Train {
        /// Dataset to train on.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for the checkpoint and loss log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Swap heads with a trained checkpoint.
    Swap {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        input: SwapInput,
        /// Output directory for the swapped clips.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated clips with ground truth and print the metric table.
    Eval {
        /// A clip directory or a directory of clip directories.
        #[arg(long)]
        generated: PathBuf,
        /// A clip directory, a directory of clip directories, or a dataset (its V_a clips).
        #[arg(long)]
        ground_truth: PathBuf,
        /// Directory for report.txt and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the motion, expression and fused weight maps of a clip as one PNG.
    WeightsViz {
        #[command(flatten)]
        input: VizInput,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct SwapInput {
    /// Swap every sample of this dataset into OUT/<id>.
    #[arg(long, conflicts_with_all = ["driving", "reference"])]
    pub data: Option<PathBuf>,
    /// Driving clip directory.
    #[arg(long, requires = "reference")]
    pub driving: Option<PathBuf>,
    /// Reference identity image.
    #[arg(long, requires = "driving")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = true)]
pub struct VizInput {
    /// Dataset holding the sample.
    #[arg(long, requires = "id", conflicts_with_all = ["clip", "landmarks"])]
    pub data: Option<PathBuf>,
    /// Sample id within the dataset.
    #[arg(long, requires = "data")]
    pub id: Option<String>,
    /// Clip directory.
    #[arg(long, requires = "landmarks")]
    pub clip: Option<PathBuf>,
    /// Landmark track file for the clip.
    #[arg(long, requires = "clip")]
    pub landmarks: Option<PathBuf>,
}

pub fn command() -> clap::Command {
    Cli::command().after_long_help(format!("{}\n{EXIT_CODES}", keys_help()))
}

/// Parses arguments; clap handles `--help` and usage errors itself.
pub fn parse() -> Cli {
    let matches = command().get_matches();
    Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit())
}

pub fn settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        s.apply_file(path)?;
    }
    for pair in &cli.overrides {
        s.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        s.set("seed", &seed.to_string())?;
    }
    Ok(s)
}

/// Runs the command and returns the text to print on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    let s = settings(cli)?;
    match &cli.command {
        Command::GenData { out } => commands::gen_data(&s, out),
        Command::Train { data, out, resume } => commands::train_cmd(&s, data, out, resume.as_deref()),
        Command::Swap { checkpoint, input, out } => {
            let source = match (&input.data, &input.driving, &input.reference) {
                (Some(d), None, None) => SwapSource::Dataset(d.clone()),
                (None, Some(d), Some(r)) => SwapSource::Single {
                    driving: d.clone(),
                    reference: r.clone(),
                },
                _ => return Err(CliError::usage("give --data, or --driving with --reference")),
            };
            commands::swap(&s, checkpoint, &source, out)
        }
        Command::Eval {
            generated,
            ground_truth,
            out,
        } => commands::eval(&s, generated, ground_truth, out.as_deref()).map(|r| r.to_table()),
        Command::WeightsViz { input, out } => {
            let source = match (&input.data, &input.id, &input.clip, &input.landmarks) {
                (Some(d), Some(id), None, None) => VizSource::Sample {
                    data: d.clone(),
                    id: id.clone(),
                },
                (None, None, Some(c), Some(l)) => VizSource::Clip {
                    clip: c.clone(),
                    landmarks: l.clone(),
                },
                _ => return Err(CliError::usage("give --data with --id, or --clip with --landmarks")),
            };
            commands::weights_viz(&s, &source, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed = 3\nmear.alpha = 0.2\ntrain.lr = 0.01\n").unwrap();
        let cli = Cli::try_parse_from([
            "headswap",
            "gen-data",
            "--out",
            "x",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "mear.alpha=0.4",
            "--seed",
            "9",
        ])
        .unwrap();
        let s = settings(&cli).unwrap();
        assert_eq!((s.seed(), s.mear().alpha, s.train().adam.lr), (9, 0.4, 0.01));
    }

    #[test]
    fn long_help_documents_keys_and_exit_codes() {
        let help = command().render_long_help().to_string();
        assert!(help.contains("mear.weight_floor_lambda") && help.contains("missing or unreadable checkpoint"));
    }
}
