//! Dendrite segmentation for X-ray tomography volumes of lithium cells.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense arrays with a reverse-mode autodiff tape.
//! * [`nn`]: convolutions, pooling, attention, normalization and embeddings.
//! * [`arch`]: U-Net, Y-Net and T-Net builders plus the probability-averaging
//!   ensemble (E-Net).
//! * [`metrics`]: segmentation losses, confusion counts, IoU and Dice.
//! * [`geometry`]: voxel volumes, grayscale inversion, homography
//!   rectification and ROI cropping.
//! * [`data`]: patch extraction, stitching, dataset splits and augmentation.
//! * [`phantom`]: synthetic dendrite volumes with exact ground truth.
//! * [`engine`]: training, checkpoints, full-volume inference and volume
//!   quantification.
//! * [`bench`]: per-patch latency measurement.

pub mod arch;
pub mod bench;
pub mod data;
pub mod engine;
mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod phantom;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, Var};
