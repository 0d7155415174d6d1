//! Raw-volume preprocessing: voxel grids and their file format, grayscale
//! inversion, corner-driven homography rectification and ROI cropping.

mod homography;
mod rectify;
mod volume;

pub use homography::{dlt, estimate_homography, CornerSet, Homography, MIN_DET};
pub use rectify::{rectify_plane, sample, Interp, Plane};
pub use volume::{crop_roi, invert_grayscale, Dtype, VolumeGrid, VoxelData, DEFAULT_VOXEL_SIZE_UM};

use serde::{Deserialize, Serialize};

/// Corner file contents: the plane to rectify plus its corner set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneCorners {
    pub plane: Plane,
    #[serde(flatten)]
    pub set: CornerSet,
}

impl PlaneCorners {
    pub fn from_toml(text: &str) -> crate::Result<Self> {
        let pc: Self = toml::from_str(text)?;
        pc.set.validate()?;
        Ok(pc)
    }

    pub fn to_toml(&self) -> crate::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
