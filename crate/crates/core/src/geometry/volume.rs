use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_VOXEL_SIZE_UM: f64 = 1.33;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn zeros(dtype: Dtype, len: usize) -> Self {
        match dtype {
            Dtype::U8 => VoxelData::U8(vec![0; len]),
            Dtype::U16 => VoxelData::U16(vec![0; len]),
            Dtype::F32 => VoxelData::F32(vec![0.0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::U16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VoxelData::U8(_) => Dtype::U8,
            VoxelData::U16(_) => Dtype::U16,
            VoxelData::F32(_) => Dtype::F32,
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            VoxelData::U8(v) => v[i] as f64,
            VoxelData::U16(v) => v[i] as f64,
            VoxelData::F32(v) => v[i] as f64,
        }
    }

    /// Stores `value`, rounding and saturating for integer types.
    pub fn set(&mut self, i: usize, value: f64) {
        match self {
            VoxelData::U8(v) => v[i] = value.round().clamp(0.0, u8::MAX as f64) as u8,
            VoxelData::U16(v) => v[i] = value.round().clamp(0.0, u16::MAX as f64) as u16,
            VoxelData::F32(v) => v[i] = value as f32,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::U8(v) => v.clone(),
            VoxelData::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::U8 => VoxelData::U8(bytes.to_vec()),
            Dtype::U16 => VoxelData::U16(
                bytes
                    .chunks_exact(2)
                    .map(|b| u16::from_le_bytes([b[0], b[1]]))
                    .collect(),
            ),
            Dtype::F32 => VoxelData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
        }
    }
}

/// A z-major voxel volume with isotropic spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    /// `(nz, ny, nx)`.
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub data: VoxelData,
}

impl VolumeGrid {
    pub fn new(dims: [usize; 3], voxel_size: f64, data: VoxelData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "volume",
                format!("dims {dims:?} hold {n} voxels but the buffer has {}", data.len()),
            ));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel size {voxel_size} must be positive")));
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn zeros(dims: [usize; 3], dtype: Dtype) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            voxel_size: DEFAULT_VOXEL_SIZE_UM,
            data: VoxelData::zeros(dtype, n),
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f64 {
        self.data.get(self.index(z, y, x))
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, value: f64) {
        let i = self.index(z, y, x);
        self.data.set(i, value);
    }

    /// All voxels widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.data.get(i)).collect()
    }

    /// Writes `<stem>.hdr` (TOML) and `<stem>.raw` (little-endian payload).
    pub fn save(&self, stem: &Path) -> Result<PathBuf> {
        self.write(stem, None)
    }

    /// [`save`](Self::save) with the name of the random generator that
    /// produced the volume recorded in the header.
    pub fn save_generated(&self, stem: &Path, generator: &str) -> Result<PathBuf> {
        self.write(stem, Some(generator.to_string()))
    }

    fn write(&self, stem: &Path, generator: Option<String>) -> Result<PathBuf> {
        let hdr_path = stem.with_extension("hdr");
        let raw_path = stem.with_extension("raw");
        let header = VolumeHeader {
            dims: self.dims,
            dtype: self.dtype(),
            voxel_size_um: self.voxel_size,
            endianness: Endianness::Little,
            payload: raw_path
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::invalid(format!("bad volume path {}", stem.display())))?
                .to_string(),
            generator,
        };
        fs::write(&hdr_path, toml::to_string(&header)?)?;
        fs::write(&raw_path, self.data.to_le_bytes())?;
        Ok(hdr_path)
    }

    /// Reads a volume from its header path (or the shared stem).
    pub fn load(path: &Path) -> Result<Self> {
        let hdr_path = path.with_extension("hdr");
        let header: VolumeHeader = toml::from_str(&fs::read_to_string(&hdr_path)?)?;
        let raw_path = hdr_path.with_file_name(&header.payload);
        let expected = header.dims.iter().product::<usize>() * header.dtype.bytes();
        let mut bytes = Vec::with_capacity(expected);
        fs::File::open(&raw_path)?
            .take(expected as u64 + 1)
            .read_to_end(&mut bytes)?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                offset: bytes.len() as u64,
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{} is longer than the {expected} bytes its header declares",
                raw_path.display()
            )));
        }
        Self::new(
            header.dims,
            header.voxel_size_um,
            VoxelData::from_le_bytes(header.dtype, &bytes),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Endianness {
    Little,
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    /// `[z, y, x]`.
    dims: [usize; 3],
    dtype: Dtype,
    voxel_size_um: f64,
    endianness: Endianness,
    payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<String>,
}

/// `max − x` for integer volumes, `(max + min) − x` for float volumes.
pub fn invert_grayscale(v: &VolumeGrid) -> VolumeGrid {
    let data = match &v.data {
        VoxelData::U8(d) => VoxelData::U8(d.iter().map(|&x| u8::MAX - x).collect()),
        VoxelData::U16(d) => VoxelData::U16(d.iter().map(|&x| u16::MAX - x).collect()),
        VoxelData::F32(d) => {
            let finite = d.iter().copied().filter(|x| x.is_finite());
            let (lo, hi) = finite.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let mid = if lo <= hi { hi as f64 + lo as f64 } else { 0.0 };
            VoxelData::F32(d.iter().map(|&x| (mid - x as f64) as f32).collect())
        }
    };
    VolumeGrid {
        dims: v.dims,
        voxel_size: v.voxel_size,
        data,
    }
}

/// Copies the half-open box `lo..hi` (`[z, y, x]` each).
pub fn crop_roi(v: &VolumeGrid, lo: [usize; 3], hi: [usize; 3]) -> Result<VolumeGrid> {
    if (0..3).any(|a| lo[a] >= hi[a] || hi[a] > v.dims[a]) {
        return Err(Error::invalid(format!(
            "crop {lo:?}..{hi:?} is empty or outside volume {:?}",
            v.dims
        )));
    }
    let dims = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let rows = (lo[0]..hi[0]).flat_map(|z| (lo[1]..hi[1]).map(move |y| (z, y)));
    let data = match &v.data {
        VoxelData::U8(d) => VoxelData::U8(rows.flat_map(|(z, y)| row(d, v, z, y, lo[2], hi[2])).collect()),
        VoxelData::U16(d) => VoxelData::U16(rows.flat_map(|(z, y)| row(d, v, z, y, lo[2], hi[2])).collect()),
        VoxelData::F32(d) => VoxelData::F32(rows.flat_map(|(z, y)| row(d, v, z, y, lo[2], hi[2])).collect()),
    };
    VolumeGrid::new(dims, v.voxel_size, data)
}

fn row<'a, T: Copy>(
    d: &'a [T],
    v: &VolumeGrid,
    z: usize,
    y: usize,
    x0: usize,
    x1: usize,
) -> impl Iterator<Item = T> + 'a {
    let start = v.index(z, y, 0);
    d[start + x0..start + x1].iter().copied()
}
