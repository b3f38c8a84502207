//! `asc` — pipeline driver for the scene-classification workspace.
//!
//! Nine subcommands cover the full run: corpus synthesis, feature
//! extraction, waveform augmentation, two-stage training, scoring, score
//! fusion, device-grouped evaluation, activation-map export, and the
//! augmentation ablation sweep. All behavior is driven by one `key=value`
//! configuration (see [`config`]); artifacts carry the configuration's
//! fingerprint so stale inputs are detected.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 missing
//! or unreadable artifact, 4 numerical divergence during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asc_core::Error;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "asc", version, about = "Acoustic scene classification pipeline")]
struct Cli {
    /// Configuration file of key=value lines; relative paths inside it
    /// resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single configuration key, e.g. --set train.epochs=3.
    /// May repeat; applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override the synthesis, augmentation, and training seeds at once.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Proceed despite configuration-fingerprint mismatches and overwrite
    /// existing feature caches.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its manifest.
    SynthData,
    /// Extract and cache log-mel feature tensors for every clip.
    Features,
    /// Synthesize augmented training clips and the extended manifest.
    Augment,
    /// Train the configured model families for both stages.
    Train,
    /// Score the test split with every trained model.
    Predict,
    /// Ensemble per-stage scores and apply the two-stage product rule.
    Fuse,
    /// Report accuracy by device group for a score table.
    Evaluate {
        /// Score table to evaluate (default: the fused two-stage scores).
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Export class activation maps from the trained resnet.
    Cam {
        /// Clip path (as listed in the manifest) to map; may repeat.
        /// Default: the first test clip of every scene.
        #[arg(long)]
        clip: Vec<String>,
        /// Scene class to map (default: each clip's own label).
        #[arg(long)]
        target: Option<String>,
    },
    /// Train and evaluate one family under cumulative augmentation sets.
    Ablate,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_)
        | Error::LabelSum { .. }
        | Error::ShapeMismatch { .. }
        | Error::TooShort { .. }
        | Error::SceneMismatch { .. } => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let result = RunConfig::build(cli.config.as_deref(), &cli.set, cli.seed).and_then(|cfg| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.workers {
            pool = pool.num_threads(n.max(1));
        }
        let pool = pool
            .build()
            .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
        let ctx = commands::Ctx {
            cfg,
            force: cli.force,
        };
        pool.install(|| match &cli.command {
            Command::SynthData => commands::synth_data(&ctx),
            Command::Features => commands::features(&ctx),
            Command::Augment => commands::augment(&ctx),
            Command::Train => commands::train(&ctx),
            Command::Predict => commands::predict(&ctx),
            Command::Fuse => commands::fuse(&ctx),
            Command::Evaluate { scores } => commands::evaluate(&ctx, scores.as_deref()),
            Command::Cam { clip, target } => commands::cam(&ctx, clip, target.as_deref()),
            Command::Ablate => commands::ablate(&ctx),
        })
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
