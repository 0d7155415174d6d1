//! `dseg`: command-line front end for the dendrite segmentation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dseg::arch::ModelKind;
use dseg::data::SplitTag;
use dseg::geometry::Plane;

mod commands;
mod pgm;

#[derive(Parser, Debug)]
#[command(name = "dseg", version, about = "Dendrite segmentation for XCT volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Warp every slice of one plane so the given corners land on a rectangle.
    Rectify(RectifyArgs),
    /// Invert grayscale values.
    Invert(InOut),
    /// Cut a half-open box out of a volume.
    Crop(CropArgs),
    /// Generate a synthetic dendrite volume and its exact mask.
    Phantom(PhantomArgs),
    /// Cut a volume and mask into a split patch dataset.
    Patchify(PatchifyArgs),
    /// Train a model on a patch dataset.
    Train(TrainArgs),
    /// Segment a volume with one checkpoint or an ensemble.
    Predict(PredictArgs),
    /// Score checkpoints on a dataset split as a metrics table.
    Evaluate(EvaluateArgs),
    /// Grid-search ensemble weights on a dataset split.
    EnsembleSearch(SearchArgs),
    /// Single-patch latency of checkpoints and their ensemble.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct InOut {
    /// Input volume header.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output volume stem; `.hdr` and `.raw` are appended.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RectifyArgs {
    #[command(flatten)]
    io: InOut,
    /// TOML file with `plane`, `corners`, `width` and `height`.
    #[arg(long)]
    corners: PathBuf,
    /// Nearest-neighbour sampling, for label volumes.
    #[arg(long)]
    nearest: bool,
}

#[derive(Args, Debug)]
struct CropArgs {
    #[command(flatten)]
    io: InOut,
    /// Inclusive lower corner `z,y,x`.
    #[arg(long, value_parser = parse_triple)]
    lo: [usize; 3],
    /// Exclusive upper corner `z,y,x`.
    #[arg(long, value_parser = parse_triple)]
    hi: [usize; 3],
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Phantom parameters as TOML; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PatchifyArgs {
    /// Image volume header.
    #[arg(long = "in")]
    input: PathBuf,
    /// Binary mask volume header.
    #[arg(long)]
    mask: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "xy")]
    plane: Plane,
    #[arg(long, default_value_t = dseg::data::TRAIN_STRIDE)]
    stride: usize,
    /// Seed of the train/val/test shuffle.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Patch dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
    /// Training configuration as TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architecture when no config is given.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Models {
    /// Checkpoint files; repeat for an ensemble.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Ensemble weights as TOML; needs every named model.
    #[arg(long)]
    ensemble: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    models: Models,
    /// Volume header.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "xy")]
    plane: Plane,
    #[arg(long, default_value_t = dseg::data::INFER_STRIDE)]
    stride: usize,
    /// Defaults to the ensemble threshold, else 0.5.
    #[arg(long)]
    threshold: Option<f64>,
    /// Skip the per-slice image exports.
    #[arg(long)]
    no_images: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    models: Models,
    /// Patch dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitTag,
    #[arg(long)]
    threshold: Option<f64>,
    /// Also measure latency with this many timed runs.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = dseg::bench::MIN_WARMUP)]
    warmup: usize,
    /// Decimal digits of mIoU and mDSC.
    #[arg(long, default_value_t = 4)]
    digits: usize,
}

#[derive(Args, Debug)]
struct SearchArgs {
    /// Checkpoint files to combine.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Patch dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "val")]
    split: SplitTag,
    /// Output ensemble TOML.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    grid: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    models: Models,
    /// Patch dataset to draw inputs from; without it a phantom is generated.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Phantom seed when no dataset is given.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = dseg::bench::MIN_REPS)]
    reps: usize,
    #[arg(long, default_value_t = dseg::bench::MIN_WARMUP)]
    warmup: usize,
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected z,y,x, got {s:?}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
