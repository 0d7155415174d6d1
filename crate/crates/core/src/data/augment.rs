use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patch::PatchSample;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Arbitrary-angle rotation.
    pub rotation: bool,
    /// Horizontal and vertical flips, drawn independently.
    pub flips: bool,
    /// Largest fraction of the side length removed by the random crop.
    pub crop_frac: f64,
    /// Largest integer shift in pixels along each axis.
    pub shift: usize,
    pub zoom_range: [f64; 2],
    /// Largest additive brightness change and relative contrast change.
    pub brightness_contrast: f64,
    /// Chance that each enabled transform is applied.
    pub probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: true,
            flips: true,
            crop_frac: 0.02,
            shift: 12,
            zoom_range: [0.8, 1.0],
            brightness_contrast: 0.05,
            probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every transform switched off.
    pub fn disabled() -> Self {
        Self {
            rotation: false,
            flips: false,
            crop_frac: 0.0,
            shift: 0,
            zoom_range: [1.0, 1.0],
            brightness_contrast: 0.0,
            probability: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.zoom_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "zoom range {:?} must lie in (0, 1]",
                self.zoom_range
            )));
        }
        if !(0.0..=0.1).contains(&self.crop_frac) {
            return Err(Error::invalid(format!(
                "crop fraction {} outside [0, 0.1]",
                self.crop_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) || !(0.0..1.0).contains(&self.brightness_contrast) {
            return Err(Error::invalid(
                "probability and brightness/contrast range must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// One concrete set of augmentation parameters; `None` means skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentDraw {
    /// Radians, counter-clockwise on screen.
    pub rotation: Option<f64>,
    pub hflip: bool,
    pub vflip: bool,
    /// Side fraction removed and the crop origin as fractions of the slack.
    pub crop: Option<(f64, f64, f64)>,
    /// `(dy, dx)`.
    pub shift: Option<(i64, i64)>,
    pub zoom: Option<f64>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let p = cfg.probability;
        let mut hit = |enabled: bool| enabled && rng.random_bool(p);
        let (rot, hf, vf) = (hit(cfg.rotation), hit(cfg.flips), hit(cfg.flips));
        let (crop, shift, zoom) = (
            hit(cfg.crop_frac > 0.0),
            hit(cfg.shift > 0),
            hit(cfg.zoom_range[0] < 1.0),
        );
        let (bright, contrast) = (hit(cfg.brightness_contrast > 0.0), hit(cfg.brightness_contrast > 0.0));
        let s = cfg.shift as i64;
        let bc = cfg.brightness_contrast;
        Self {
            rotation: rot.then(|| rng.random_range(0.0..std::f64::consts::TAU)),
            hflip: hf,
            vflip: vf,
            crop: crop.then(|| (rng.random_range(0.0..=cfg.crop_frac), rng.random(), rng.random())),
            shift: shift.then(|| (rng.random_range(-s..=s), rng.random_range(-s..=s))),
            zoom: zoom.then(|| rng.random_range(cfg.zoom_range[0]..=cfg.zoom_range[1])),
            brightness: bright.then(|| rng.random_range(-bc..=bc)),
            contrast: contrast.then(|| 1.0 + rng.random_range(-bc..=bc)),
        }
    }

    /// Reproducible draw for one sample in one epoch.
    pub fn for_sample(cfg: &AugmentConfig, sample_id: u64, epoch: u64) -> Self {
        let key = cfg.seed
            ^ sample_id.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ epoch.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(17);
        Self::sample(cfg, &mut ChaCha8Rng::seed_from_u64(key))
    }
}

/// Reflect-101 coordinate folding into `[0, n−1]`.
fn reflect(t: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let t = t.rem_euclid(period);
    if t > (n - 1) as f64 {
        period - t
    } else {
        t
    }
}

/// Resamples both planes through `map`: output `(x, y)` reads the source at
/// `map(x, y)`, bilinear on the image and nearest on the mask.
fn warp(s: &PatchSample, map: impl Fn(f64, f64) -> (f64, f64)) -> PatchSample {
    let n = s.size;
    let mut image = vec![0.0f32; n * n];
    let mut mask = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            let (sx, sy) = map(c as f64, r as f64);
            let (x, y) = (reflect(sx, n), reflect(sy, n));
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let at = |rr: usize, cc: usize| s.image[rr * n + cc] as f64;
            let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
            let v = lerp(lerp(at(y0, x0), at(y0, x1), fx), lerp(at(y1, x0), at(y1, x1), fx), fy);
            image[r * n + c] = v.clamp(0.0, 1.0) as f32;
            let (mx, my) = (
                reflect(sx.round(), n).round() as usize,
                reflect(sy.round(), n).round() as usize,
            );
            mask[r * n + c] = s.mask[my * n + mx];
        }
    }
    PatchSample {
        size: n,
        image,
        mask,
        meta: s.meta,
    }
}

/// Applies the drawn transforms in a fixed order: rotation, flips, crop,
/// shift, zoom, then intensity.
pub fn augment(sample: &PatchSample, draw: &AugmentDraw) -> PatchSample {
    let n = sample.size;
    let c = (n as f64 - 1.0) / 2.0;
    let mut s = sample.clone();
    if let Some(theta) = draw.rotation {
        let (sin, cos) = sin_cos_exact(theta);
        // With y pointing down, screen counter-clockwise rotation sends
        // (x, y) to (x cos + y sin, −x sin + y cos) about the centre; each
        // output pixel reads the source through the inverse of that map.
        s = warp(&s, |x, y| {
            let (dx, dy) = (x - c, y - c);
            (c + dx * cos - dy * sin, c + dx * sin + dy * cos)
        });
    }
    if draw.hflip {
        s = warp(&s, |x, y| (n as f64 - 1.0 - x, y));
    }
    if draw.vflip {
        s = warp(&s, |x, y| (x, n as f64 - 1.0 - y));
    }
    if let Some((frac, oy, ox)) = draw.crop {
        let side = (n as f64 * (1.0 - frac)).round().max(1.0);
        let slack = n as f64 - side;
        let (y0, x0) = ((oy * slack).floor(), (ox * slack).floor());
        let scale = side / n as f64;
        s = warp(&s, |x, y| (x0 + (x + 0.5) * scale - 0.5, y0 + (y + 0.5) * scale - 0.5));
    }
    if let Some((dy, dx)) = draw.shift {
        s = warp(&s, |x, y| (x - dx as f64, y - dy as f64));
    }
    if let Some(z) = draw.zoom {
        s = warp(&s, |x, y| (c + (x - c) * z, c + (y - c) * z));
    }
    if draw.brightness.is_some() || draw.contrast.is_some() {
        let (b, k) = (draw.brightness.unwrap_or(0.0), draw.contrast.unwrap_or(1.0));
        for v in &mut s.image {
            *v = ((*v as f64 - 0.5) * k + 0.5 + b).clamp(0.0, 1.0) as f32;
        }
    }
    s
}

/// `sin_cos` with exact values at multiples of a quarter turn.
fn sin_cos_exact(theta: f64) -> (f64, f64) {
    let quarter = theta / std::f64::consts::FRAC_PI_2;
    if (quarter - quarter.round()).abs() > 1e-12 {
        return theta.sin_cos();
    }
    match (quarter.round() as i64).rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    }
}
