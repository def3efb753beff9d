use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;

use commands::{FeatureMode, SynthKind};

/// Context-aware deep feature compression tracker.
#[derive(Debug, Parser)]
#[command(name = "ctxtrack", version)]
struct Cli {
    /// TOML pipeline config. Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one config key, e.g. `--set features.channels=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the base auto-encoder on a directory of FMAP samples.
    Pretrain {
        feature_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster samples, train one expert per cluster and the context selector.
    TrainExperts {
        feature_dir: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track the ground-truth target of an OTB-layout sequence.
    Track {
        sequence_dir: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `builtin` or `fmap:<dir>` with one FMAP per frame.
        #[arg(long, default_value = "builtin")]
        features: FeatureMode,
    },
    /// Score result CSVs against sequence ground truth.
    Eval {
        results_dir: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract built-in feature samples around jittered ground-truth boxes.
    Samples {
        /// One sequence directory or a directory of sequences.
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        per_sequence: usize,
    },
    /// Render a procedural test sequence.
    Synthesize {
        out: PathBuf,
        #[arg(long, value_enum, default_value = "translate")]
        kind: SynthKind,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
}

fn run(cli: Cli) -> error::CliResult<()> {
    let cfg = commands::load_config(cli.config.as_deref(), cli.seed, &cli.overrides)?;
    match cli.command {
        Command::Pretrain { feature_dir, out } => commands::cmd_pretrain(&feature_dir, &out, &cfg),
        Command::TrainExperts { feature_dir, base, out } => {
            commands::cmd_train_experts(&feature_dir, &base, &out, &cfg)
        }
        Command::Track { sequence_dir, models, out, features } => {
            commands::cmd_track(&sequence_dir, &models, &out, &features, &cfg)
        }
        Command::Eval { results_dir, sequences, out } => commands::cmd_eval(&results_dir, &sequences, &out),
        Command::Samples { sequences, out, per_sequence } => {
            commands::cmd_samples(&sequences, &out, per_sequence, &cfg)
        }
        Command::Synthesize { out, kind, frames } => commands::cmd_synth(&out, kind, frames, cfg.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
