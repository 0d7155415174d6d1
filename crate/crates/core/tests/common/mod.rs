//! Oracles shared by the integration suites.
#![allow(dead_code)]

use dseg::geometry::*;

pub const SQUARE: usize = 20;
pub const BOARD: usize = 8 * SQUARE + 1;

/// Checkerboard in rectified coordinates; edges fall between pixel centres.
pub fn board(u: f64, v: f64) -> f64 {
    if u < -0.5 || v < -0.5 || u > BOARD as f64 - 0.5 || v > BOARD as f64 - 0.5 {
        return 0.0;
    }
    let k = ((u + 0.5) / SQUARE as f64).floor() as i64 + ((v + 0.5) / SQUARE as f64).floor() as i64;
    if k.rem_euclid(2) == 0 {
        40.0
    } else {
        220.0
    }
}

/// Target-to-source map of the synthetic acquisition: rotation, shear and a
/// mild perspective tilt.
pub fn acquisition() -> Homography {
    Homography::from_rows([[0.95, 0.12, 30.0], [-0.08, 0.9, 35.0], [2e-4, 1e-4, 1.0]]).unwrap()
}

/// Source slice rendered with 4x4 supersampling.
pub fn warped_board(size: usize) -> VolumeGrid {
    let to_target = acquisition().inverse().unwrap();
    let mut v = VolumeGrid::zeros([1, size, size], Dtype::F32);
    for r in 0..size {
        for c in 0..size {
            let mut acc = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let (x, y) = (
                        c as f64 + (j as f64 + 0.5) / 4.0 - 0.5,
                        r as f64 + (i as f64 + 0.5) / 4.0 - 0.5,
                    );
                    let (u, v) = to_target.apply(x, y);
                    acc += board(u, v);
                }
            }
            v.set(0, r, c, acc / 16.0);
        }
    }
    v
}

/// Sub-pixel position where a 1-D profile crosses the midpoint of its range.
fn crossing(profile: &[(f64, f64)]) -> Option<f64> {
    let lo = profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    profile.windows(2).find_map(|w| {
        let ((x0, a), (x1, b)) = (w[0], w[1]);
        ((a - mid) * (b - mid) <= 0.0 && a != b).then(|| x0 + (mid - a) / (b - a) * (x1 - x0))
    })
}

/// Locates the inner corner near `(x, y)` from the four edges meeting there.
pub fn locate_corner(img: &[f64], size: usize, x: f64, y: f64) -> (f64, f64) {
    let (xi, yi) = (x.round() as i64, y.round() as i64);
    let at = |r: i64, c: i64| img[r as usize * size + c as usize];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for off in [-7i64, -6, -5, -4, 4, 5, 6, 7] {
        let row: Vec<(f64, f64)> = (-6..=6).map(|d| ((xi + d) as f64, at(yi + off, xi + d))).collect();
        xs.extend(crossing(&row));
        let col: Vec<(f64, f64)> = (-6..=6).map(|d| ((yi + d) as f64, at(yi + d, xi + off))).collect();
        ys.extend(crossing(&col));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&xs), mean(&ys))
}

/// Rectifies the synthetic slice from its four board corners and returns the
/// RMS distance between located and true inner corners.
pub fn checkerboard_rectification_rms() -> f64 {
    let src = warped_board(230);
    let g = acquisition();
    let edge = BOARD as f64 - 1.0;
    let corners = [[0.0, 0.0], [edge, 0.0], [edge, edge], [0.0, edge]].map(|[u, v]| {
        let (x, y) = g.apply(u, v);
        [x, y]
    });
    let set = CornerSet {
        corners,
        width: BOARD,
        height: BOARD,
    };
    let h = estimate_homography(&set).unwrap();
    let out = rectify_plane(&src, Plane::Xy, &h, (BOARD, BOARD), Interp::Bilinear).unwrap();
    let img = out.to_f64();
    let mut sq = 0.0;
    let mut n = 0;
    for k in 1..8 {
        for l in 1..8 {
            let (tx, ty) = ((k * SQUARE) as f64 - 0.5, (l * SQUARE) as f64 - 0.5);
            let (fx, fy) = locate_corner(&img, BOARD, tx, ty);
            sq += (fx - tx).powi(2) + (fy - ty).powi(2);
            n += 1;
        }
    }
    (sq / n as f64).sqrt()
}
