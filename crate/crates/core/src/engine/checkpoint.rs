//! Binary checkpoints: `DSEG` magic, `u32` version, `u64` length plus TOML
//! config text, `u32` tensor count, then per tensor a `u16`-prefixed name,
//! `u8` rank, `u32` dims and little-endian `f32` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{TrainConfig, TrainHistory};
use crate::arch::{ArchConfig, ModelGraph};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSEG";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ConfigText {
    arch: ArchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    history: Option<TrainHistory>,
}

/// A loaded checkpoint.
pub struct Checkpoint<T> {
    pub model: ModelGraph<T>,
    pub train: Option<TrainConfig>,
    pub history: Option<TrainHistory>,
}

/// Serializes parameters as `f32`; models held in `f64` lose precision.
pub fn checkpoint_bytes<T: Scalar>(
    model: &ModelGraph<T>,
    train: Option<&TrainConfig>,
    history: Option<&TrainHistory>,
) -> Result<Vec<u8>> {
    let text = toml::to_string(&ConfigText {
        arch: model.config.clone(),
        train: train.cloned(),
        history: history.cloned(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ModelGraph<T>,
    train: Option<&TrainConfig>,
    history: Option<&TrainHistory>,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, train, history)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.array()?) as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(format!("config text: {e}")))?;
    let cfg: ConfigText = toml::from_str(text)?;
    let mut model = ModelGraph::<T>::build(cfg.arch)?;
    let count = u32::from_le_bytes(r.array()?) as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, the architecture has {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("tensor name: {e}")))?
            .to_string();
        let rank = r.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.array()?) as usize);
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        model.params.set(id, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        train: cfg.train,
        history: cfg.history,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    parse_checkpoint(&fs::read(path)?)
}
