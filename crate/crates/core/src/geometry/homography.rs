use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest |det| accepted after normalizing `h[2][2]` to one.
pub const MIN_DET: f64 = 1e-12;

/// Projective map of the plane, normalized so `h[2][2] = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self { h: Matrix3::identity() }
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    fn from_matrix(h: Matrix3<f64>) -> Result<Self> {
        let s = h[(2, 2)];
        if !s.is_finite() || s.abs() < f64::EPSILON * h.amax() {
            return Err(Error::Degenerate {
                condition: f64::INFINITY,
            });
        }
        let h = h / s;
        let det = h.determinant();
        if !(det.abs() > MIN_DET) {
            return Err(Error::Degenerate {
                condition: 1.0 / det.abs(),
            });
        }
        Ok(Self { h })
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            h: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.h[(r, c)]))
    }

    pub fn determinant(&self) -> f64 {
        self.h.determinant()
    }

    /// Maps `(x, y)`; points sent to infinity come back as NaN.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.h * Vector3::new(x, y, 1.0);
        if p.z == 0.0 {
            return (f64::NAN, f64::NAN);
        }
        (p.x / p.z, p.y / p.z)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.h.try_inverse().ok_or(Error::Degenerate {
            condition: f64::INFINITY,
        })?;
        Self::from_matrix(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        Self::from_matrix(self.h * other.h)
    }
}

/// Four source points (top-left, top-right, bottom-right, bottom-left) and
/// the size of the target rectangle they map onto.
///
/// Targets are pixel centres: `(0, 0)`, `(w−1, 0)`, `(w−1, h−1)`, `(0, h−1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerSet {
    pub corners: [[f64; 2]; 4],
    pub width: usize,
    pub height: usize,
}

impl CornerSet {
    pub fn targets(&self) -> [[f64; 2]; 4] {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::invalid(format!(
                "target rectangle {}x{} must be at least 2x2",
                self.width, self.height
            )));
        }
        if self.corners.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("corner coordinates must be finite"));
        }
        check_general_position(&self.corners)
    }
}

/// Rejects quads with three (nearly) collinear points.
fn check_general_position(p: &[[f64; 2]; 4]) -> Result<()> {
    let scale = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
        .fold(0.0, f64::max);
    for skip in 0..4 {
        let t: Vec<&[f64; 2]> = p
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, q)| q)
            .collect();
        let area = ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs();
        if !(area > 1e-9 * scale * scale) {
            return Err(Error::Degenerate {
                condition: if area > 0.0 {
                    scale * scale / area
                } else {
                    f64::INFINITY
                },
            });
        }
    }
    Ok(())
}

/// Similarity taking the points into `[-1, 1]²` around their centroid.
fn normalizer(p: &[[f64; 2]; 4]) -> Matrix3<f64> {
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
    let r = p
        .iter()
        .map(|q| (q[0] - cx).abs().max((q[1] - cy).abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    Matrix3::new(1.0 / r, 0.0, -cx / r, 0.0, 1.0 / r, -cy / r, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
    p.map(|q| {
        let v = t * Vector3::new(q[0], q[1], 1.0);
        [v.x / v.z, v.y / v.z]
    })
}

/// Direct linear transform from four correspondences, `h[2][2]` fixed to 1.
pub fn dlt(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography> {
    check_general_position(src)?;
    check_general_position(dst)?;
    let (ts, td) = (normalizer(src), normalizer(dst));
    let (s, d) = (transform(&ts, src), transform(&td, dst));
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let ([x, y], [u, v]) = (s[i], d[i]);
        let r = 2 * i;
        a.set_row(
            r,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]),
        );
        a.set_row(
            r + 1,
            &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]),
        );
        b[r] = u;
        b[r + 1] = v;
    }
    let sv = a.singular_values();
    let condition = sv.max() / sv.min();
    if !(condition < 1e12) {
        return Err(Error::Degenerate { condition });
    }
    // nalgebra's LU uses partial (row) pivoting.
    let x = a.lu().solve(&b).ok_or(Error::Degenerate { condition })?;
    let hn = Matrix3::new(x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], 1.0);
    let td_inv = td.try_inverse().ok_or(Error::Degenerate { condition })?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// Homography mapping the source corners onto the target rectangle.
pub fn estimate_homography(corners: &CornerSet) -> Result<Homography> {
    corners.validate()?;
    dlt(&corners.corners, &corners.targets())
}
