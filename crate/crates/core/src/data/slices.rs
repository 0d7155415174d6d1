use super::patch::{patchify, PatchSample, SliceView};
use crate::geometry::{Plane, VolumeGrid};
use crate::metrics::check_binary;
use crate::{Error, Result};

/// Intensity mapping onto `[0, 1]`: identity when the volume already lies in
/// that range, otherwise global min-max scaling.
pub fn unit_range(v: &VolumeGrid) -> impl Fn(f64) -> f32 {
    let values = v.to_f64();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let identity = lo >= 0.0 && hi <= 1.0;
    let span = hi - lo;
    move |x| {
        if identity {
            x as f32
        } else if span > 0.0 {
            ((x - lo) / span).clamp(0.0, 1.0) as f32
        } else {
            0.0
        }
    }
}

/// Every slice of `plane` tiled into patches; `mask` must share the
/// volume's dims and be binary.
pub fn volume_patches(
    volume: &VolumeGrid,
    mask: Option<&VolumeGrid>,
    plane: Plane,
    patch: usize,
    stride: usize,
    volume_id: u32,
) -> Result<Vec<PatchSample>> {
    if let Some(m) = mask {
        if m.dims != volume.dims {
            return Err(Error::ShapeMismatch {
                op: "volume_patches",
                lhs: volume.dims.to_vec(),
                rhs: m.dims.to_vec(),
            });
        }
    }
    let scale = unit_range(volume);
    let (slices, rows, cols) = plane.slice_dims(volume.dims);
    let mut out = Vec::new();
    for s in 0..slices {
        let image: Vec<f32> = plane.extract(volume, s).into_iter().map(&scale).collect();
        let labels: Option<Vec<u8>> = mask.map(|m| plane.extract(m, s).into_iter().map(|v| v as u8).collect());
        if let Some(l) = &labels {
            check_binary(l)?;
        }
        let view = SliceView {
            rows,
            cols,
            image: &image,
            mask: labels.as_deref(),
        };
        out.extend(patchify(view, patch, stride, volume_id, s)?);
    }
    Ok(out)
}
