//! `cxr-bench`: split bundles, train and evaluate the CNN, score zero-shot
//! embeddings with or without threshold calibration, and render Grad-CAM
//! overlays. All outputs are JSON/CSV/PPM files under `--out`.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numeric failure,
//! 4 I/O failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cxr_core::calibrate::ThresholdGrid;
use cxr_core::data::Split;
use cxr_core::Error;

#[derive(Parser)]
#[command(
    name = "cxr-bench",
    version,
    about = "Chest X-ray CNN vs zero-shot benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign stratified train/val/test splits to an unsplit bundle, in place.
    Split(SplitArgs),
    /// Train the CNN and keep the checkpoint with the best validation AUC.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a bundle.
    EvalCnn(EvalArgs),
    /// Score an embedding set against its prompt prototypes.
    Zeroshot(ZeroshotArgs),
    /// Write Grad-CAM overlays for selected records.
    Gradcam(GradcamArgs),
    /// Generate synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.1, 0.3])]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Disable flips and affine jitter.
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Argmax,
    Calibrated,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 0.02)]
    grid_lo: f64,
    #[arg(long, default_value_t = 0.98)]
    grid_hi: f64,
    #[arg(long, default_value_t = 0.001)]
    grid_step: f64,
}

impl GridArgs {
    fn grid(&self) -> ThresholdGrid {
        ThresholdGrid {
            lo: self.grid_lo,
            hi: self.grid_hi,
            step: self.grid_step,
        }
    }
}

#[derive(Args)]
struct ZeroshotArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Argmax)]
    mode: Mode,
    /// Validation embedding set; required in calibrated mode.
    #[arg(long)]
    val_embeddings: Option<PathBuf>,
    /// Overrides the logit scale recorded in the embedding manifest.
    #[arg(long)]
    logit_scale: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Comma-separated record ids; may be empty.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    ids: Vec<String>,
    #[arg(long, default_value_t = 1)]
    target_class: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Synthetic radiograph-like bundle (splits unassigned).
    Bundle {
        #[arg(long, default_value_t = 120)]
        negatives: usize,
        #[arg(long, default_value_t = 120)]
        positives: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic embedding set with shared prompt prototypes.
    Embeddings {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Numeric { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Split(a) => commands::split(&a.bundle, &a.ratios, a.seed),
        Command::Train(a) => commands::train(&a),
        Command::EvalCnn(a) => commands::eval_cnn(&a.checkpoint, &a.bundle, a.split, &a.out),
        Command::Zeroshot(a) => commands::zeroshot(&a),
        Command::Gradcam(a) => commands::gradcam(&a),
        Command::Synth(s) => commands::synth(&s),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
