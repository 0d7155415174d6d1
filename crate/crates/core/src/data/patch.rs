use serde::{Deserialize, Serialize};

use crate::arch::PATCH;
use crate::{Error, Result};

/// Where a patch came from: volume id, slice index and top-left offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchMeta {
    pub volume: u32,
    pub slice: usize,
    pub y: usize,
    pub x: usize,
}

/// A square image patch in `[0, 1]` with its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub size: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub meta: PatchMeta,
}

impl PatchSample {
    pub fn new(size: usize, image: Vec<f32>, mask: Vec<u8>, meta: PatchMeta) -> Result<Self> {
        if size == 0 || image.len() != size * size || mask.len() != size * size {
            return Err(Error::shape(
                "patch",
                format!(
                    "{size}x{size} patch needs {} pixels, got image {} and mask {}",
                    size * size,
                    image.len(),
                    mask.len()
                ),
            ));
        }
        if let Some(v) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain {
                op: "patch",
                detail: format!("image value {v} outside [0, 1]"),
            });
        }
        crate::metrics::check_binary(&mask)?;
        Ok(Self {
            size,
            image,
            mask,
            meta,
        })
    }
}

/// A single 2-D slice with an optional label mask, row-major.
#[derive(Clone, Copy, Debug)]
pub struct SliceView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub image: &'a [f32],
    pub mask: Option<&'a [u8]>,
}

/// Tile origins along one axis: regular steps, plus a final tile flush with
/// the far edge when the steps do not reach it.
pub fn tile_offsets(len: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::invalid("patch and stride must be positive"));
    }
    if len < patch {
        return Err(Error::shape(
            "patchify",
            format!("extent {len} is smaller than patch {patch}"),
        ));
    }
    let mut offsets: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if offsets.last() != Some(&(len - patch)) {
        offsets.push(len - patch);
    }
    Ok(offsets)
}

/// Row-major tiling of a slice into `patch × patch` samples.
pub fn patchify(
    slice: SliceView<'_>,
    patch: usize,
    stride: usize,
    volume: u32,
    index: usize,
) -> Result<Vec<PatchSample>> {
    let (rows, cols) = (slice.rows, slice.cols);
    if slice.image.len() != rows * cols || slice.mask.is_some_and(|m| m.len() != rows * cols) {
        return Err(Error::shape(
            "patchify",
            format!("buffers do not match a {rows}x{cols} slice"),
        ));
    }
    let ys = tile_offsets(rows, patch, stride)?;
    let xs = tile_offsets(cols, patch, stride)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            let mut image = Vec::with_capacity(patch * patch);
            let mut mask = Vec::with_capacity(patch * patch);
            for r in y..y + patch {
                image.extend_from_slice(&slice.image[r * cols + x..r * cols + x + patch]);
                match slice.mask {
                    Some(m) => mask.extend_from_slice(&m[r * cols + x..r * cols + x + patch]),
                    None => mask.resize(mask.len() + patch, 0),
                }
            }
            let meta = PatchMeta {
                volume,
                slice: index,
                y,
                x,
            };
            out.push(PatchSample::new(patch, image, mask, meta)?);
        }
    }
    Ok(out)
}

/// Default extraction stride for training patches.
pub const TRAIN_STRIDE: usize = PATCH;
/// Default stride for inference; overlaps are averaged when stitching.
pub const INFER_STRIDE: usize = PATCH / 2;

/// Reassembles per-patch maps at `(y, x)` offsets into a `rows × cols` map,
/// averaging overlaps in double precision.
pub fn stitch<'a>(
    tiles: impl IntoIterator<Item = ((usize, usize), &'a [f32])>,
    patch: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<f32>> {
    let mut sum = vec![0.0f64; rows * cols];
    let mut count = vec![0u32; rows * cols];
    for ((y, x), tile) in tiles {
        if tile.len() != patch * patch || y + patch > rows || x + patch > cols {
            return Err(Error::shape(
                "stitch",
                format!(
                    "{} values at ({y}, {x}) do not fit a {patch}-patch in {rows}x{cols}",
                    tile.len()
                ),
            ));
        }
        for r in 0..patch {
            let base = (y + r) * cols + x;
            for c in 0..patch {
                sum[base + c] += tile[r * patch + c] as f64;
                count[base + c] += 1;
            }
        }
    }
    let missing = count.iter().filter(|&&c| c == 0).count();
    if let Some(first) = count.iter().position(|&c| c == 0) {
        return Err(Error::CoverageGap {
            missing,
            first: (first / cols, first % cols),
        });
    }
    Ok(sum.iter().zip(&count).map(|(&s, &c)| (s / c as f64) as f32).collect())
}

/// Foreground iff `p > threshold`.
pub fn binarize(probs: &[f32], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p as f64 > threshold)).collect()
}

/// Min-max scaling to `[0, 1]`; a constant input maps to zeros.
pub fn normalize_unit(values: &[f64]) -> Vec<f32> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0) as f32
            } else {
                0.0
            }
        })
        .collect()
}
