use serde::{Deserialize, Serialize};

use crate::geometry::VolumeGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DendriteReport {
    pub voxels: u64,
    /// `voxels · voxel_size³` in µm³.
    pub volume_um3: f64,
    /// Labelled voxels inside the region over the region's voxel count.
    pub fraction: f64,
}

fn binary(v: &VolumeGrid, what: &str) -> Result<Vec<bool>> {
    (0..v.len())
        .map(|i| match v.data.get(i) {
            x if x == 0.0 => Ok(false),
            x if x == 1.0 => Ok(true),
            x => Err(Error::Domain {
                op: "quantify_dendrites",
                detail: format!("{what} voxel {i} has value {x}, expected 0 or 1"),
            }),
        })
        .collect()
}

/// Dendrite volume of a binary mask; the fraction is taken over `region`
/// when given, otherwise over the whole volume.
pub fn quantify_dendrites(mask: &VolumeGrid, region: Option<&VolumeGrid>) -> Result<DendriteReport> {
    let m = binary(mask, "mask")?;
    let voxels = m.iter().filter(|&&b| b).count() as u64;
    let (inside, total) = match region {
        Some(r) => {
            if r.dims != mask.dims {
                return Err(Error::ShapeMismatch {
                    op: "quantify_dendrites",
                    lhs: mask.dims.to_vec(),
                    rhs: r.dims.to_vec(),
                });
            }
            let r = binary(r, "region")?;
            let inside = m.iter().zip(&r).filter(|(&a, &b)| a && b).count();
            (inside as u64, r.iter().filter(|&&b| b).count() as u64)
        }
        None => (voxels, m.len() as u64),
    };
    Ok(DendriteReport {
        voxels,
        volume_um3: voxels as f64 * mask.voxel_size.powi(3),
        fraction: if total == 0 { 0.0 } else { inside as f64 / total as f64 },
    })
}
