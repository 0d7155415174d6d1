//! Patch extraction and stitching, dataset splits, augmentation and the
//! on-disk patch dataset.

mod augment;
mod dataset;
mod patch;
mod slices;
mod split;

pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use dataset::{batch_tensors, PatchDataset, IMAGES_FILE, INDEX_FILE, MASKS_FILE};
pub use patch::{
    binarize, normalize_unit, patchify, stitch, tile_offsets, PatchMeta, PatchSample, SliceView, INFER_STRIDE,
    TRAIN_STRIDE,
};
pub use slices::{unit_range, volume_patches};
pub use split::{split_dataset, DataSplit, SplitSpec, SplitTag};
