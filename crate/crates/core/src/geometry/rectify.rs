use serde::{Deserialize, Serialize};

use super::homography::Homography;
use super::volume::{VolumeGrid, VoxelData};
use crate::parallel::for_each_item;
use crate::{Error, Result};

/// Slicing plane; slices run along the remaining axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Rows `y`, columns `x`, one slice per `z`.
    Xy,
    /// Rows `z`, columns `x`, one slice per `y`.
    Xz,
    /// Rows `z`, columns `y`, one slice per `x`.
    Yz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    /// `(slices, rows, cols)` of a volume viewed in this plane.
    pub fn slice_dims(self, [nz, ny, nx]: [usize; 3]) -> (usize, usize, usize) {
        match self {
            Plane::Xy => (nz, ny, nx),
            Plane::Xz => (ny, nz, nx),
            Plane::Yz => (nx, nz, ny),
        }
    }

    /// Volume `[z, y, x]` of slice `s`, row `r`, column `c`.
    pub fn voxel(self, s: usize, r: usize, c: usize) -> [usize; 3] {
        match self {
            Plane::Xy => [s, r, c],
            Plane::Xz => [r, s, c],
            Plane::Yz => [r, c, s],
        }
    }

    /// Inverse of [`slice_dims`](Self::slice_dims).
    pub fn volume_dims(self, slices: usize, rows: usize, cols: usize) -> [usize; 3] {
        match self {
            Plane::Xy => [slices, rows, cols],
            Plane::Xz => [rows, slices, cols],
            Plane::Yz => [rows, cols, slices],
        }
    }
}

impl Plane {
    /// Slice `s` as a row-major `rows × cols` image.
    pub fn extract(self, v: &VolumeGrid, s: usize) -> Vec<f64> {
        let (_, rows, cols) = self.slice_dims(v.dims);
        let mut img = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let [z, y, x] = self.voxel(s, r, c);
                img.push(v.get(z, y, x));
            }
        }
        img
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "xz" => Ok(Plane::Xz),
            "yz" => Ok(Plane::Yz),
            _ => Err(Error::invalid(format!("unknown plane {s:?} (expected xy, xz or yz)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interp {
    #[default]
    Bilinear,
    /// Keeps label masks binary.
    Nearest,
}

/// Samples a `rows × cols` image at `(x, y)` = (column, row); 0 outside.
pub fn sample(img: &[f64], rows: usize, cols: usize, x: f64, y: f64, interp: Interp) -> f64 {
    if interp == Interp::Nearest {
        let (c, r) = (x.round(), y.round());
        return if c >= 0.0 && r >= 0.0 && c < cols as f64 && r < rows as f64 {
            img[r as usize * cols + c as usize]
        } else {
            0.0
        };
    }
    if !(x >= 0.0 && y >= 0.0 && x <= (cols - 1) as f64 && y <= (rows - 1) as f64) {
        return 0.0;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(cols - 1), (y0 + 1).min(rows - 1));
    let at = |r: usize, c: usize| img[r * cols + c];
    // Exact at integer coordinates: zero weights never touch the neighbour.
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
    lerp(lerp(at(y0, x0), at(y0, x1), fx), lerp(at(y1, x0), at(y1, x1), fx), fy)
}

/// Inverse-warp every slice of `plane` onto a `w × h` target: target pixel
/// `p` reads the source at `H⁻¹·p`.
pub fn rectify_plane(
    v: &VolumeGrid,
    plane: Plane,
    h: &Homography,
    (out_w, out_h): (usize, usize),
    interp: Interp,
) -> Result<VolumeGrid> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("output size {out_w}x{out_h} must be positive")));
    }
    let inv = h.inverse()?;
    let (slices, rows, cols) = plane.slice_dims(v.dims);
    let source: Vec<(f64, f64)> = (0..out_h)
        .flat_map(|r| (0..out_w).map(move |c| (r, c)))
        .map(|(r, c)| inv.apply(c as f64, r as f64))
        .collect();
    let mut out = vec![0.0; slices * out_h * out_w];
    for_each_item(&mut out, out_h * out_w, |s, dst| {
        let img = plane.extract(v, s);
        for (d, &(x, y)) in dst.iter_mut().zip(&source) {
            *d = sample(&img, rows, cols, x, y, interp);
        }
    });
    let dims = plane.volume_dims(slices, out_h, out_w);
    let mut data = VoxelData::zeros(v.dtype(), out.len());
    let mut grid = VolumeGrid::zeros(dims, v.dtype());
    for s in 0..slices {
        for r in 0..out_h {
            for c in 0..out_w {
                let [z, y, x] = plane.voxel(s, r, c);
                data.set(grid.index(z, y, x), out[(s * out_h + r) * out_w + c]);
            }
        }
    }
    grid.data = data;
    grid.voxel_size = v.voxel_size;
    Ok(grid)
}
