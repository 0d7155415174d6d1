use std::fs;
use std::path::Path;

use dseg::geometry::{Plane, VolumeGrid};
use dseg::Result;

/// Binary 8-bit PGM of a `rows × cols` mask, foreground 255.
pub fn encode(mask: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&v| if v > 0.0 { 255u8 } else { 0 }));
    out
}

/// One `slice_NNNN.pgm` per slice of `plane`.
pub fn export_slices(mask: &VolumeGrid, plane: Plane, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let (slices, rows, cols) = plane.slice_dims(mask.dims);
    for s in 0..slices {
        fs::write(
            dir.join(format!("slice_{s:04}.pgm")),
            encode(&plane.extract(mask, s), rows, cols),
        )?;
    }
    Ok(slices)
}
