//! Synthetic XCT-like volumes: two electrode slabs, an electrolyte gap and
//! porous dendrites grown from the electrode surfaces, with exact labels.
//!
//! The slabs are stacked along `y` (rows of the `xy` plane), so that the
//! default thin-in-`z` volume shows the full cell cross-section in every
//! `xy` slice. All randomness comes from ChaCha8 seeded with
//! [`PhantomConfig::seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arch::PATCH;
use crate::data::{volume_patches, PatchSample};
use crate::geometry::{Dtype, Plane, VolumeGrid, VoxelData, DEFAULT_VOXEL_SIZE_UM};
use crate::{Error, Result};

/// Generator name written into saved phantom headers.
pub const GENERATOR: &str = "chacha8";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// `(nz, ny, nx)`.
    pub dims: [usize; 3],
    /// Thickness in `y` of each electrode slab.
    pub electrode_thickness: usize,
    pub dendrite_count: usize,
    /// Chance of spawning a side branch at each growth step.
    pub branch_prob: f64,
    pub step_len: f64,
    /// Growth steps of each trunk; branches get a share of what is left.
    pub steps: usize,
    pub radius_range: [f64; 2],
    /// Electrolyte, electrode and dendrite intensities.
    pub intensity: [f64; 3],
    /// Fraction of interior dendrite voxels reset to electrolyte intensity.
    pub hollow_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [16, 512, 512],
            electrode_thickness: 64,
            dendrite_count: 12,
            branch_prob: 0.08,
            step_len: 2.0,
            steps: 80,
            radius_range: [2.0, 5.0],
            intensity: [0.35, 0.15, 0.75],
            hollow_fraction: 0.3,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let [nz, ny, nx] = self.dims;
        let bad = |msg: String| Err(Error::invalid(msg));
        if nz == 0 || nx == 0 {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        if 2 * self.electrode_thickness >= ny {
            return bad(format!(
                "two electrodes of thickness {} do not leave an electrolyte gap in {ny} rows",
                self.electrode_thickness
            ));
        }
        let [lo, hi] = self.radius_range;
        if !(lo >= 1.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("radius range {:?} must satisfy 1 ≤ lo ≤ hi", self.radius_range));
        }
        if !(self.step_len > 0.0 && self.step_len.is_finite()) {
            return bad(format!("step length {} must be positive", self.step_len));
        }
        let [e, li, d] = self.intensity;
        if self.intensity.iter().any(|v| !(0.0..=1.0).contains(v)) || e == li || e == d || li == d {
            return bad(format!(
                "intensities {:?} must be distinct values in [0, 1]",
                self.intensity
            ));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) || !(0.0..=1.0).contains(&self.hollow_fraction) {
            return bad("branch and hollow probabilities must lie in [0, 1]".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be nonnegative", self.noise_sigma));
        }
        Ok(())
    }

    /// Rows `[lo, hi)` of the electrolyte gap.
    pub fn electrolyte_rows(&self) -> (usize, usize) {
        (self.electrode_thickness, self.dims[1] - self.electrode_thickness)
    }

    /// Midpoint between electrolyte and dendrite intensities.
    pub fn threshold(&self) -> f64 {
        0.5 * (self.intensity[0] + self.intensity[2])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub config: PhantomConfig,
    /// `f32` intensities in `[0, 1]`.
    pub volume: VolumeGrid,
    /// `u8` labels, dendrite = 1.
    pub mask: VolumeGrid,
    /// Labelled voxels as counted during generation.
    pub dendrite_voxels: u64,
    pub hollow_voxels: u64,
}

struct Tip {
    pos: [f64; 3],
    dir: [f64; 3],
    steps: usize,
}

fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 1.0, 0.0]
    } else {
        v.map(|c| c / n)
    }
}

struct Grower<'a> {
    cfg: &'a PhantomConfig,
    mask: &'a mut [u8],
    /// Inclusive bounds of sphere centres per axis.
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Grower<'_> {
    fn sphere(&mut self, c: [f64; 3], r: f64) {
        let [nz, ny, nx] = self.cfg.dims;
        let (y0, y1) = self.cfg.electrolyte_rows();
        let range = |centre: f64, lo: usize, hi: usize| {
            let a = (centre - r).ceil().max(lo as f64) as usize;
            let b = ((centre + r).floor() as i64).min(hi as i64 - 1);
            (a, b)
        };
        let (za, zb) = range(c[0], 0, nz);
        let (ya, yb) = range(c[1], y0, y1);
        let (xa, xb) = range(c[2], 0, nx);
        let r2 = r * r;
        for z in za as i64..=zb {
            let dz = z as f64 - c[0];
            for y in ya as i64..=yb {
                let dy = y as f64 - c[1];
                for x in xa as i64..=xb {
                    let dx = x as f64 - c[2];
                    if dz * dz + dy * dy + dx * dx <= r2 {
                        self.mask[(z as usize * ny + y as usize) * nx + x as usize] = 1;
                    }
                }
            }
        }
    }

    /// Capsule from `a` to `b`, sampled densely enough that consecutive
    /// spheres overlap in voxel space.
    fn segment(&mut self, a: [f64; 3], b: [f64; 3], ra: f64, rb: f64) {
        let len = (0..3).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>().sqrt();
        let n = (len / 0.5).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = [0, 1, 2].map(|i| a[i] + t * (b[i] - a[i]));
            self.sphere(p, ra + t * (rb - ra));
        }
    }

    fn grow(&mut self, rng: &mut ChaCha8Rng, root: [f64; 3], up: f64) {
        let cfg = self.cfg;
        let jitter = Normal::new(0.0, 0.35).expect("valid sigma");
        let [rlo, rhi] = cfg.radius_range;
        let radius = |rng: &mut ChaCha8Rng| if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
        let mut tips = vec![Tip {
            pos: root,
            dir: normalized([jitter.sample(rng), up, jitter.sample(rng)]),
            steps: cfg.steps,
        }];
        let mut spawned = 1;
        while let Some(mut tip) = tips.pop() {
            let mut r = radius(rng);
            self.sphere(tip.pos, r);
            while tip.steps > 0 {
                tip.steps -= 1;
                let d = tip.dir;
                tip.dir = normalized([
                    d[0] + jitter.sample(rng),
                    d[1] + jitter.sample(rng) + 0.2 * up,
                    d[2] + jitter.sample(rng),
                ]);
                let mut next = [0, 1, 2].map(|i| tip.pos[i] + cfg.step_len * tip.dir[i]);
                for i in [0, 2] {
                    if next[i] < self.lo[i] || next[i] > self.hi[i] {
                        tip.dir[i] = -tip.dir[i];
                        next[i] = next[i].clamp(self.lo[i], self.hi[i]);
                    }
                }
                let beyond = next[1] < self.lo[1] || next[1] > self.hi[1];
                next[1] = next[1].clamp(self.lo[1], self.hi[1]);
                let r_next = radius(rng);
                self.segment(tip.pos, next, r, r_next);
                tip.pos = next;
                r = r_next;
                if beyond {
                    break;
                }
                if spawned < 64 && tip.steps > 2 && rng.random_bool(cfg.branch_prob) {
                    spawned += 1;
                    let d = tip.dir;
                    tips.push(Tip {
                        pos: tip.pos,
                        dir: normalized([0, 1, 2].map(|i| d[i] + 2.5 * jitter.sample(rng))),
                        steps: tip.steps * 3 / 5,
                    });
                }
            }
        }
    }
}

/// Voxels whose six face neighbours are all labelled.
fn interior(mask: &[u8], [nz, ny, nx]: [usize; 3]) -> Vec<usize> {
    let mut out = Vec::new();
    for z in 1..nz.saturating_sub(1) {
        for y in 1..ny - 1 {
            for x in 1..nx.saturating_sub(1) {
                let i = (z * ny + y) * nx + x;
                if mask[i] == 1
                    && [i - 1, i + 1, i - nx, i + nx, i - nx * ny, i + nx * ny]
                        .iter()
                        .all(|&j| mask[j] == 1)
                {
                    out.push(i);
                }
            }
        }
    }
    out
}

/// Builds a phantom; identical configs give bitwise-identical output.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let [nz, ny, nx] = cfg.dims;
    let n = nz * ny * nx;
    let (y0, y1) = cfg.electrolyte_rows();
    let [mu_e, mu_li, mu_d] = cfg.intensity;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut mask = vec![0u8; n];
    let mut grower = Grower {
        cfg,
        mask: &mut mask,
        lo: [0.0, y0 as f64, 0.0],
        hi: [(nz - 1) as f64, (y1 - 1) as f64, (nx - 1) as f64],
    };
    for _ in 0..cfg.dendrite_count {
        let from_top = rng.random_bool(0.5);
        let (y, up) = if from_top { (y0, 1.0) } else { (y1 - 1, -1.0) };
        let root = [rng.random_range(0..nz) as f64, y as f64, rng.random_range(0..nx) as f64];
        grower.grow(&mut rng, root, up);
    }

    let mut volume = vec![mu_e; n];
    for z in 0..nz {
        for y in (0..y0).chain(y1..ny) {
            let row = (z * ny + y) * nx;
            volume[row..row + nx].fill(mu_li);
        }
    }
    for (v, &m) in volume.iter_mut().zip(&mask) {
        if m == 1 {
            *v = mu_d;
        }
    }
    let mut hollow_voxels = 0;
    if cfg.hollow_fraction > 0.0 {
        for i in interior(&mask, cfg.dims) {
            if rng.random_bool(cfg.hollow_fraction) {
                volume[i] = mu_e;
                hollow_voxels += 1;
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in &mut volume {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let dendrite_voxels = mask.iter().map(|&m| m as u64).sum();
    let volume = VolumeGrid::new(
        cfg.dims,
        DEFAULT_VOXEL_SIZE_UM,
        VoxelData::F32(volume.into_iter().map(|v| v as f32).collect()),
    )?;
    let mask = VolumeGrid::new(cfg.dims, DEFAULT_VOXEL_SIZE_UM, VoxelData::U8(mask))?;
    Ok(Phantom {
        config: cfg.clone(),
        volume,
        mask,
        dendrite_voxels,
        hollow_voxels,
    })
}

/// One phantom per config, generated on separate threads.
pub fn generate_many(cfgs: &[PhantomConfig]) -> Result<Vec<Phantom>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || generate_phantom(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("phantom generator panicked"))
            .collect()
    })
}

impl Phantom {
    /// `u8` mask of the electrolyte gap.
    pub fn electrolyte_region(&self) -> VolumeGrid {
        let [nz, _, nx] = self.config.dims;
        let (y0, y1) = self.config.electrolyte_rows();
        let mut region = VolumeGrid::zeros(self.config.dims, Dtype::U8);
        region.voxel_size = self.volume.voxel_size;
        for z in 0..nz {
            for y in y0..y1 {
                for x in 0..nx {
                    region.set(z, y, x, 1.0);
                }
            }
        }
        region
    }

    /// Classical segmentation: electrolyte-gap voxels on the dendrite side
    /// of [`PhantomConfig::threshold`].
    pub fn threshold_baseline(&self) -> VolumeGrid {
        let cfg = &self.config;
        let thr = cfg.threshold();
        let sign = (cfg.intensity[2] - cfg.intensity[0]).signum();
        let [nz, _, nx] = cfg.dims;
        let (y0, y1) = cfg.electrolyte_rows();
        let mut out = VolumeGrid::zeros(cfg.dims, Dtype::U8);
        out.voxel_size = self.volume.voxel_size;
        for z in 0..nz {
            for y in y0..y1 {
                for x in 0..nx {
                    if (self.volume.get(z, y, x) - thr) * sign > 0.0 {
                        out.set(z, y, x, 1.0);
                    }
                }
            }
        }
        out
    }
}

/// All slices of `plane` tiled into `128 × 128` patches with their labels.
pub fn phantom_to_patches(p: &Phantom, plane: Plane, stride: usize) -> Result<Vec<PatchSample>> {
    volume_patches(&p.volume, Some(&p.mask), plane, PATCH, stride, 0)
}
