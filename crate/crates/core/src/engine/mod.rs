//! Training, checkpoints, full-volume inference and dendrite quantification.

mod checkpoint;
mod infer;
mod optim;
mod quantify;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION,
};
pub use infer::{predict_probabilities, predict_volume, Ensemble, Segmenter, INFER_BATCH};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, SGD_MOMENTUM};
pub use quantify::{quantify_dendrites, DendriteReport};
pub use train::{
    evaluate_samples, overfit, predict_samples, train, EpochRow, OverfitReport, TrainConfig, TrainHistory,
    TrainOutcome, HISTORY_HEADER,
};
