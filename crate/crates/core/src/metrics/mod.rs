//! Segmentation losses on the tape and overlap metrics on binary masks.

mod confusion;
mod losses;
mod table;

pub(crate) use confusion::check_binary;
pub use confusion::{confusion, dsc, iou, mean_metrics, mean_metrics_masks, ConfusionCounts, Masks};
pub use losses::{
    balanced_bce_loss, bce_loss, focal_tversky_loss, loss, tversky_index, tversky_loss, LossKind, LossParams, CLAMP,
};
pub use table::{MetricsRow, TABLE_HEADER};
