use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::patch::{PatchMeta, PatchSample};
use super::split::SplitTag;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const INDEX_FILE: &str = "index.toml";
pub const IMAGES_FILE: &str = "images.bin";
pub const MASKS_FILE: &str = "masks.bin";

/// Patches tagged with their split, stored as an index plus two blobs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchDataset {
    pub samples: Vec<PatchSample>,
    pub tags: Vec<SplitTag>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    patch: usize,
    samples: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    id: usize,
    split: SplitTag,
    #[serde(flatten)]
    meta: PatchMeta,
    /// Byte offsets into the image and mask blobs.
    image_offset: u64,
    mask_offset: u64,
}

impl PatchDataset {
    pub fn push(&mut self, sample: PatchSample, tag: SplitTag) {
        self.samples.push(sample);
        self.tags.push(tag);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, tag: SplitTag) -> Vec<&PatchSample> {
        self.samples
            .iter()
            .zip(&self.tags)
            .filter(|(_, &t)| t == tag)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.size)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let patch = self.patch_size().unwrap_or(0);
        if self.samples.iter().any(|s| s.size != patch) {
            return Err(Error::invalid("dataset mixes patch sizes"));
        }
        fs::create_dir_all(dir)?;
        let pixels = patch * patch;
        let mut images = Vec::with_capacity(self.len() * pixels * 4);
        let mut masks = Vec::with_capacity(self.len() * pixels);
        let mut entries = Vec::with_capacity(self.len());
        for (id, (s, &split)) in self.samples.iter().zip(&self.tags).enumerate() {
            entries.push(IndexEntry {
                id,
                split,
                meta: s.meta,
                image_offset: images.len() as u64,
                mask_offset: masks.len() as u64,
            });
            images.extend(s.image.iter().flat_map(|v| v.to_le_bytes()));
            masks.extend_from_slice(&s.mask);
        }
        let index = Index {
            patch,
            samples: entries,
        };
        fs::write(dir.join(INDEX_FILE), toml::to_string(&index)?)?;
        fs::write(dir.join(IMAGES_FILE), images)?;
        fs::write(dir.join(MASKS_FILE), masks)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Index = toml::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
        let images = fs::read(dir.join(IMAGES_FILE))?;
        let masks = fs::read(dir.join(MASKS_FILE))?;
        let pixels = index.patch * index.patch;
        let mut out = PatchDataset::default();
        for e in index.samples {
            let (io, mo) = (e.image_offset as usize, e.mask_offset as usize);
            if io + 4 * pixels > images.len() {
                return Err(Error::Truncated {
                    offset: images.len() as u64,
                });
            }
            if mo + pixels > masks.len() {
                return Err(Error::Truncated {
                    offset: masks.len() as u64,
                });
            }
            let image = images[io..io + 4 * pixels]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let mask = masks[mo..mo + pixels].to_vec();
            out.push(PatchSample::new(index.patch, image, mask, e.meta)?, e.split);
        }
        Ok(out)
    }
}

/// Stacks patches into `[N, 1, P, P]` images and masks.
pub fn batch_tensors<T: Scalar>(samples: &[&PatchSample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let p = samples.first().ok_or_else(|| Error::invalid("empty batch"))?.size;
    if samples.iter().any(|s| s.size != p) {
        return Err(Error::invalid("batch mixes patch sizes"));
    }
    let n = samples.len();
    let x = samples
        .iter()
        .flat_map(|s| s.image.iter().map(|&v| T::lit(v as f64)))
        .collect();
    let y = samples
        .iter()
        .flat_map(|s| s.mask.iter().map(|&v| T::lit(v as f64)))
        .collect();
    Ok((Tensor::new([n, 1, p, p], x)?, Tensor::new([n, 1, p, p], y)?))
}
