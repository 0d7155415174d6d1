use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::arch::{EnsembleSpec, ModelGraph, PATCH};
use crate::data::{patchify, stitch, unit_range, SliceView};
use crate::geometry::{Dtype, Plane, VolumeGrid, VoxelData};
use crate::parallel::for_each_item;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Patches per forward call during volume inference.
pub const INFER_BATCH: usize = 8;

/// Anything that maps unit-range `128 × 128` patches to probabilities.
pub trait Segmenter: Sync {
    /// Row-major probabilities, one `128 × 128` block per input patch.
    fn probabilities(&self, patches: &[&[f32]]) -> Result<Vec<f32>>;
}

fn patch_batch<T: Scalar>(patches: &[&[f32]]) -> Result<Tensor<T>> {
    let data = patches
        .iter()
        .flat_map(|p| p.iter().map(|&v| T::lit(v as f64)))
        .collect();
    Tensor::new([patches.len(), 1, PATCH, PATCH], data)
}

impl<T: Scalar> Segmenter for ModelGraph<T> {
    fn probabilities(&self, patches: &[&[f32]]) -> Result<Vec<f32>> {
        let y = self.predict(&patch_batch::<T>(patches)?)?;
        Ok(y.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Trained component models combined by an [`EnsembleSpec`].
pub struct Ensemble<T> {
    pub models: BTreeMap<String, ModelGraph<T>>,
    pub spec: EnsembleSpec,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(models: BTreeMap<String, ModelGraph<T>>, spec: EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        if let Some(name) = spec.weights.keys().find(|k| !models.contains_key(*k)) {
            return Err(Error::invalid(format!("ensemble weight for missing model {name}")));
        }
        Ok(Self { models, spec })
    }

    /// Per-component probability maps for a batch.
    pub fn component_maps(&self, x: &Tensor<T>) -> Result<BTreeMap<String, Tensor<T>>> {
        self.spec
            .weights
            .keys()
            .map(|k| Ok((k.clone(), self.models[k].predict(x)?)))
            .collect()
    }
}

impl<T: Scalar> Segmenter for Ensemble<T> {
    fn probabilities(&self, patches: &[&[f32]]) -> Result<Vec<f32>> {
        let maps = self.component_maps(&patch_batch::<T>(patches)?)?;
        let mut acc = vec![0.0f64; patches.len() * PATCH * PATCH];
        for (name, map) in &maps {
            let w = self.spec.weights[name];
            for (a, v) in acc.iter_mut().zip(map.data()) {
                *a += w * v.as_f64();
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}

/// Stitched probability maps for every slice of `plane`, in slice order.
pub fn predict_probabilities(model: &dyn Segmenter, v: &VolumeGrid, plane: Plane, stride: usize) -> Result<Vec<f32>> {
    let (slices, rows, cols) = plane.slice_dims(v.dims);
    let scale = unit_range(v);
    let mut out = vec![0.0f32; slices * rows * cols];
    let failure = Mutex::new(None);
    for_each_item(&mut out, rows * cols, |s, dst| {
        let mut run = || -> Result<()> {
            let image: Vec<f32> = plane.extract(v, s).into_iter().map(&scale).collect();
            let view = SliceView {
                rows,
                cols,
                image: &image,
                mask: None,
            };
            let tiles = patchify(view, PATCH, stride, 0, s)?;
            let mut probs = Vec::with_capacity(tiles.len() * PATCH * PATCH);
            for chunk in tiles.chunks(INFER_BATCH) {
                let inputs: Vec<&[f32]> = chunk.iter().map(|t| &t.image[..]).collect();
                probs.extend(model.probabilities(&inputs)?);
            }
            let stitched = stitch(
                tiles
                    .iter()
                    .zip(probs.chunks(PATCH * PATCH))
                    .map(|(t, p)| ((t.meta.y, t.meta.x), p)),
                PATCH,
                rows,
                cols,
            )?;
            dst.copy_from_slice(&stitched);
            Ok(())
        };
        if let Err(e) = run() {
            failure.lock().expect("poisoned").get_or_insert(e);
        }
    });
    match failure.into_inner().expect("poisoned") {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Slicewise patch inference with overlap averaging, thresholded
/// (`p > threshold`) into a `u8` mask with the volume's dims.
pub fn predict_volume(
    model: &dyn Segmenter,
    v: &VolumeGrid,
    plane: Plane,
    stride: usize,
    threshold: f64,
) -> Result<VolumeGrid> {
    let probs = predict_probabilities(model, v, plane, stride)?;
    let (slices, rows, cols) = plane.slice_dims(v.dims);
    let mut mask = VolumeGrid::zeros(v.dims, Dtype::U8);
    mask.voxel_size = v.voxel_size;
    let mut data = vec![0u8; mask.len()];
    for s in 0..slices {
        for r in 0..rows {
            for c in 0..cols {
                let [z, y, x] = plane.voxel(s, r, c);
                data[mask.index(z, y, x)] = u8::from(probs[(s * rows + r) * cols + c] as f64 > threshold);
            }
        }
    }
    mask.data = VoxelData::U8(data);
    Ok(mask)
}
