use std::collections::BTreeSet;

use dseg::data::*;
use dseg::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_slice(rows: usize, cols: usize, seed: u64) -> (Vec<f32>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = (0..rows * cols).map(|_| rng.random::<f32>()).collect();
    let mask = (0..rows * cols).map(|_| u8::from(rng.random_bool(0.3))).collect();
    (image, mask)
}

fn meta() -> PatchMeta {
    PatchMeta {
        volume: 0,
        slice: 0,
        y: 0,
        x: 0,
    }
}

#[test]
fn tile_offsets_exact_and_edge_anchored() {
    assert_eq!(tile_offsets(256, 128, 128).unwrap(), vec![0, 128]);
    assert_eq!(tile_offsets(128, 128, 128).unwrap(), vec![0]);
    assert_eq!(tile_offsets(200, 128, 128).unwrap(), vec![0, 72]);
    assert_eq!(tile_offsets(256, 128, 64).unwrap(), vec![0, 64, 128]);
    assert!(tile_offsets(100, 128, 128).is_err());
}

#[test]
fn patchify_offsets_and_identity_stitch_200() {
    let (image, mask) = random_slice(200, 200, 1);
    let view = SliceView {
        rows: 200,
        cols: 200,
        image: &image,
        mask: Some(&mask),
    };
    let patches = patchify(view, 128, 128, 3, 9).unwrap();
    let offsets: Vec<(usize, usize)> = patches.iter().map(|p| (p.meta.y, p.meta.x)).collect();
    assert_eq!(offsets, vec![(0, 0), (0, 72), (72, 0), (72, 72)]);
    assert!(patches.iter().all(|p| p.meta.volume == 3 && p.meta.slice == 9));
    let back = stitch(
        patches.iter().map(|p| ((p.meta.y, p.meta.x), &p.image[..])),
        128,
        200,
        200,
    )
    .unwrap();
    assert_eq!(back, image);
}

#[test]
fn overlap_is_averaged() {
    let a = [0.4f32; 4];
    let b = [0.6f32; 4];
    let out = stitch([((0, 0), &a[..]), ((0, 1), &b[..])], 2, 2, 3).unwrap();
    assert!((out[1] as f64 - 0.5).abs() < 1e-7);
    assert!((out[0] - 0.4).abs() < 1e-7 && (out[2] - 0.6).abs() < 1e-7);
}

#[test]
fn coverage_gap_reports_first_missing_pixel() {
    let a = [0.5f32; 4];
    match stitch([((0, 0), &a[..])], 2, 3, 2) {
        Err(Error::CoverageGap { missing, first }) => assert_eq!((missing, first), (2, (2, 0))),
        other => panic!("expected coverage gap, got {other:?}"),
    }
}

#[test]
fn split_sizes_follow_floor_rule() {
    let spec = SplitSpec::default();
    assert_eq!(spec.sizes(10), [8, 1, 1]);
    assert_eq!(spec.sizes(4433), [3547, 443, 443]);
    let ids: Vec<usize> = (0..4433).collect();
    let a = split_dataset(&ids, &spec).unwrap();
    let b = split_dataset(&ids, &spec).unwrap();
    assert_eq!(a.sizes(), (3547, 443, 443));
    assert_eq!(a, b);
    let c = split_dataset(&ids, &SplitSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.train, c.train);
    assert!(split_dataset::<usize>(&[], &spec).is_err());
}

fn one_hot(n: usize, r: usize, c: usize) -> PatchSample {
    let mut image = vec![0.0; n * n];
    let mut mask = vec![0; n * n];
    image[r * n + c] = 1.0;
    mask[r * n + c] = 1;
    PatchSample::new(n, image, mask, meta()).unwrap()
}

#[test]
fn quarter_turn_moves_pixel_per_convention() {
    // Screen counter-clockwise about the centre ((n−1)/2, (n−1)/2): with y
    // down, (x, y) ↦ (c + (y − c), c − (x − c)).
    let n = 4;
    let c = 1.5;
    for (r, col) in [(0, 0), (0, 3), (1, 2)] {
        let s = one_hot(n, r, col);
        let out = augment(
            &s,
            &AugmentDraw {
                rotation: Some(std::f64::consts::FRAC_PI_2),
                ..Default::default()
            },
        );
        let (x, y) = (col as f64, r as f64);
        let (tx, ty) = ((c + (y - c)) as usize, (c - (x - c)) as usize);
        let hot: Vec<usize> = out
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hot, vec![ty * n + tx], "pixel ({r},{col})");
        assert_eq!(out.image[ty * n + tx], 1.0);
    }
}

#[test]
fn disabled_config_and_double_flip_are_identity() {
    let (image, mask) = random_slice(16, 16, 2);
    let s = PatchSample::new(16, image, mask, meta()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draw = AugmentDraw::sample(&AugmentConfig::disabled(), &mut rng);
    assert_eq!(draw, AugmentDraw::default());
    assert_eq!(augment(&s, &draw), s);
    let flip = AugmentDraw {
        hflip: true,
        ..Default::default()
    };
    assert_eq!(augment(&augment(&s, &flip), &flip), s);
    let vflip = AugmentDraw {
        vflip: true,
        ..Default::default()
    };
    assert_eq!(augment(&augment(&s, &vflip), &vflip), s);
}

#[test]
fn draws_are_keyed_by_sample_and_epoch() {
    let cfg = AugmentConfig::default();
    assert_eq!(AugmentDraw::for_sample(&cfg, 4, 2), AugmentDraw::for_sample(&cfg, 4, 2));
    let distinct: BTreeSet<String> = (0..20)
        .map(|e| format!("{:?}", AugmentDraw::for_sample(&cfg, 4, e)))
        .collect();
    assert!(distinct.len() > 15);
}

#[test]
fn dataset_roundtrip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = PatchDataset::default();
    for i in 0..5u64 {
        let (image, mask) = random_slice(8, 8, 10 + i);
        let m = PatchMeta {
            volume: i as u32,
            slice: 3,
            y: 8 * i as usize,
            x: 0,
        };
        ds.push(
            PatchSample::new(8, image, mask, m).unwrap(),
            SplitTag::ALL[i as usize % 3],
        );
    }
    ds.save(dir.path()).unwrap();
    let back = PatchDataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.split(SplitTag::Val).len(), 2);
    let images = dir.path().join(IMAGES_FILE);
    let bytes = std::fs::read(&images).unwrap();
    std::fs::write(&images, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(PatchDataset::load(dir.path()), Err(Error::Truncated { .. })));
}

#[test]
fn batch_tensor_layout() {
    let a = one_hot(4, 1, 2);
    let b = one_hot(4, 3, 0);
    let (x, y) = batch_tensors::<f64>(&[&a, &b]).unwrap();
    assert_eq!(x.shape(), &[2, 1, 4, 4]);
    assert_eq!(x.at(&[1, 0, 3, 0]), 1.0);
    assert_eq!(y.at(&[0, 0, 1, 2]), 1.0);
    assert_eq!(y.sum(), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_tilings_roundtrip_bitwise(ty in 1usize..4, tx in 1usize..4, p in 2usize..9, seed in any::<u64>()) {
        let (rows, cols) = (ty * p, tx * p);
        let (image, mask) = random_slice(rows, cols, seed);
        let view = SliceView { rows, cols, image: &image, mask: Some(&mask) };
        let patches = patchify(view, p, p, 0, 0).unwrap();
        prop_assert_eq!(patches.len(), ty * tx);
        for s in &patches {
            for r in 0..p {
                for c in 0..p {
                    let g = (s.meta.y + r) * cols + s.meta.x + c;
                    prop_assert_eq!(s.image[r * p + c], image[g]);
                    prop_assert_eq!(s.mask[r * p + c], mask[g]);
                }
            }
        }
        let back = stitch(patches.iter().map(|s| ((s.meta.y, s.meta.x), &s.image[..])), p, rows, cols).unwrap();
        prop_assert_eq!(back, image);
    }

    #[test]
    fn split_is_a_partition(n in 1usize..600, seed in any::<u64>()) {
        let ids: Vec<usize> = (0..n).collect();
        let s = split_dataset(&ids, &SplitSpec { fractions: [0.8, 0.1, 0.1], seed }).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        prop_assert_eq!(all, ids);
        let [a, b, c] = SplitSpec::default().sizes(n);
        prop_assert_eq!(s.sizes(), (a, b, c));
        prop_assert!(a >= b && a >= c);
    }

    #[test]
    fn augmentation_preserves_contract(seed in any::<u64>(), epoch in 0u64..50) {
        let (image, mask) = random_slice(24, 24, seed);
        let s = PatchSample::new(24, image, mask, meta()).unwrap();
        let cfg = AugmentConfig { probability: 0.9, ..AugmentConfig::default() };
        let out = augment(&s, &AugmentDraw::for_sample(&cfg, seed, epoch));
        prop_assert_eq!(out.size, 24);
        prop_assert_eq!(out.image.len(), 576);
        prop_assert!(out.mask.iter().all(|&m| m <= 1));
        prop_assert!(out.image.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.meta, s.meta);
    }
}
