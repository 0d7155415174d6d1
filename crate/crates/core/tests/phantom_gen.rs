use std::collections::VecDeque;

use dseg::geometry::{Plane, VolumeGrid};
use dseg::phantom::*;
use proptest::prelude::*;

fn small(seed: u64) -> PhantomConfig {
    PhantomConfig {
        dims: [8, 160, 160],
        electrode_thickness: 20,
        dendrite_count: 4,
        steps: 30,
        seed,
        ..PhantomConfig::default()
    }
}

fn mask_bits(p: &Phantom) -> Vec<u8> {
    (0..p.mask.len()).map(|i| p.mask.data.get(i) as u8).collect()
}

/// Sizes of the 26-connected components of a binary volume, each with a
/// flag telling whether it touches one of `rows`.
fn components(mask: &[u8], [nz, ny, nx]: [usize; 3], rows: [usize; 2]) -> Vec<(usize, bool)> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut size, mut touches) = (0, false);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
            touches |= rows.contains(&y);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                            continue;
                        }
                        let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                        if mask[j] == 1 && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        out.push((size, touches));
    }
    out
}

#[test]
fn no_dendrites_gives_empty_mask_and_layered_volume() {
    let cfg = PhantomConfig {
        dendrite_count: 0,
        noise_sigma: 0.0,
        ..small(1)
    };
    let p = generate_phantom(&cfg).unwrap();
    assert_eq!(p.dendrite_voxels, 0);
    assert!(mask_bits(&p).iter().all(|&m| m == 0));
    let [mu_e, mu_li, _] = cfg.intensity;
    for y in 0..160 {
        let want = if (20..140).contains(&y) { mu_e } else { mu_li };
        assert_eq!(p.volume.get(3, y, 77), want as f32 as f64, "row {y}");
    }
}

#[test]
fn noiseless_labels_match_intensities() {
    let cfg = PhantomConfig {
        dendrite_count: 1,
        noise_sigma: 0.0,
        ..small(2)
    };
    let p = generate_phantom(&cfg).unwrap();
    let [mu_e, _, mu_d] = cfg.intensity.map(|v| v as f32 as f64);
    let mut hollow = 0;
    for i in 0..p.mask.len() {
        let v = p.volume.data.get(i);
        if p.mask.data.get(i) == 1.0 {
            assert!(v == mu_d || v == mu_e, "voxel {i} = {v}");
            hollow += u64::from(v == mu_e);
        } else {
            assert_ne!(v, mu_d);
        }
    }
    assert!(p.dendrite_voxels > 0);
    assert_eq!(hollow, p.hollow_voxels);
}

#[test]
fn reported_count_matches_brute_force() {
    let p = generate_phantom(&PhantomConfig::default()).unwrap();
    let mut count = 0u64;
    for z in 0..p.mask.dims[0] {
        for y in 0..p.mask.dims[1] {
            for x in 0..p.mask.dims[2] {
                count += p.mask.get(z, y, x) as u64;
            }
        }
    }
    assert_eq!(count, p.dendrite_voxels);
    assert!(count > 0);
}

#[test]
fn dendrites_stay_in_electrolyte_and_reach_the_interface() {
    let cfg = small(3);
    let p = generate_phantom(&cfg).unwrap();
    let [nz, ny, nx] = cfg.dims;
    for z in 0..nz {
        for y in (0..20).chain(140..ny) {
            for x in 0..nx {
                assert_eq!(p.mask.get(z, y, x), 0.0);
            }
        }
    }
    for (size, touches) in components(&mask_bits(&p), cfg.dims, [20, 139]) {
        assert!(touches, "component of {size} voxels is detached from both interfaces");
    }
}

#[test]
fn single_dendrite_is_one_component() {
    for seed in 0..4 {
        let cfg = PhantomConfig {
            dendrite_count: 1,
            branch_prob: 0.2,
            ..small(seed)
        };
        let p = generate_phantom(&cfg).unwrap();
        assert_eq!(components(&mask_bits(&p), cfg.dims, [20, 139]).len(), 1, "seed {seed}");
    }
}

#[test]
fn noiseless_solid_phantom_is_recovered_by_threshold() {
    let cfg = PhantomConfig {
        noise_sigma: 0.0,
        hollow_fraction: 0.0,
        ..small(4)
    };
    let p = generate_phantom(&cfg).unwrap();
    assert_eq!(p.threshold_baseline(), p.mask);
}

#[test]
fn patches_tile_every_slice() {
    let cfg = PhantomConfig {
        dims: [8, 256, 256],
        electrode_thickness: 32,
        ..small(5)
    };
    let p = generate_phantom(&cfg).unwrap();
    let patches = phantom_to_patches(&p, Plane::Xy, 128).unwrap();
    assert_eq!(patches.len(), 32);
    assert!(patches.iter().all(|s| s.mask.iter().all(|&m| m <= 1)));
    for z in 0..8 {
        let from_patches: u64 = patches
            .iter()
            .filter(|s| s.meta.slice == z)
            .map(|s| s.mask.iter().map(|&m| m as u64).sum::<u64>())
            .sum();
        let mut from_slice = 0;
        for y in 0..256 {
            for x in 0..256 {
                from_slice += p.mask.get(z, y, x) as u64;
            }
        }
        assert_eq!(from_patches, from_slice, "slice {z}");
    }
    assert!(phantom_to_patches(&p, Plane::Xz, 128).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let base = small(0);
    let bad = [
        PhantomConfig {
            electrode_thickness: 80,
            ..base.clone()
        },
        PhantomConfig {
            intensity: [0.3, 0.3, 0.7],
            ..base.clone()
        },
        PhantomConfig {
            noise_sigma: -0.1,
            ..base.clone()
        },
        PhantomConfig {
            radius_range: [0.5, 2.0],
            ..base.clone()
        },
    ];
    for cfg in bad {
        assert!(generate_phantom(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn saved_header_names_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate_phantom(&small(6)).unwrap();
    let hdr = p.volume.save_generated(&dir.path().join("vol"), GENERATOR).unwrap();
    assert!(std::fs::read_to_string(&hdr)
        .unwrap()
        .contains("generator = \"chacha8\""));
    assert_eq!(VolumeGrid::load(&hdr).unwrap(), p.volume);
}

#[test]
fn parallel_generation_matches_serial() {
    let cfgs: Vec<_> = (0..3).map(small).collect();
    let many = generate_many(&cfgs).unwrap();
    for (c, p) in cfgs.iter().zip(&many) {
        assert_eq!(&generate_phantom(c).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn same_seed_same_phantom(seed in any::<u64>()) {
        let a = generate_phantom(&small(seed)).unwrap();
        let b = generate_phantom(&small(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        let c = generate_phantom(&small(seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(a.volume, c.volume);
    }
}
