use std::collections::BTreeMap;

use dseg::arch::*;
use dseg::metrics::{mean_metrics, Masks};
use dseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_batch(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        [n, 1, 128, 128],
        (0..n * 128 * 128).map(|_| rng.random::<f32>()).collect(),
    )
    .unwrap()
}

fn tap_shape<T: dseg::Scalar>(taps: &[(String, Tensor<T>)], name: &str) -> Vec<usize> {
    taps.iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("missing tap {name}"))
        .1
        .shape()
        .to_vec()
}

fn assert_contract(m: &ModelGraph<f32>) {
    for x in [Tensor::zeros([1, 1, 128, 128]), noise_batch(2, 3)] {
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[x.shape()[0], 1, 128, 128]);
        assert!(
            y.data().iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0),
            "{}",
            m.name()
        );
    }
}

#[test]
fn unet_contract_and_bottleneck() {
    let m = build_unet::<f32>(1).unwrap();
    assert_contract(&m);
    let (_, taps) = m.trace(&noise_batch(2, 4)).unwrap();
    assert_eq!(tap_shape(&taps, "bottleneck"), vec![2, 256, 8, 8]);
}

#[test]
fn unet_parameter_count_matches_ladder_formula() {
    // Encoder 3x3 convs, decoder 2x2 up-convs halving channels and 3x3 convs
    // over the skip concatenation, 1x1 head.
    let ladder = [16usize, 32, 64, 128, 256];
    let mut expected = 9 * 16 + 16;
    for i in 0..4 {
        let (a, b) = (ladder[i], ladder[i + 1]);
        expected += a * b * 9 + b;
        expected += b * a * 2 * 2 + a;
        expected += 2 * a * a * 9 + a;
    }
    expected += 16 + 1;
    let m = build_unet::<f32>(0).unwrap();
    assert_eq!(m.params.count(), expected);
    assert_eq!(UNetConfig::default().parameter_count(), expected);
}

#[test]
fn ynet_contract_and_branches() {
    let m = build_ynet::<f32>(2).unwrap();
    assert_contract(&m);
    let (_, taps) = m.trace(&noise_batch(1, 5)).unwrap();
    assert_eq!(tap_shape(&taps, "dilated_terminal"), vec![1, 16, 8, 8]);
    assert_eq!(tap_shape(&taps, "regular_terminal"), vec![1, 192, 8, 8]);
    assert_eq!(tap_shape(&taps, "pyramid"), vec![1, 48, 8, 8]);
}

#[test]
fn ynet_dilated_conv_spans_five_pixels() {
    let spec = YNetConfig::default().dilated_spec(1);
    assert_eq!(spec.extent(), (5, 5));
    let mut tape = dseg::Tape::<f64>::new();
    let mut img = vec![0.0; 15 * 15];
    img[7 * 15 + 7] = 1.0;
    let x = tape.constant(Tensor::new([1, 1, 15, 15], img).unwrap());
    let mut spec = spec;
    spec.out_channels = 1;
    spec.stride = 1;
    let w = tape.constant(Tensor::ones(spec.weight_shape()));
    let y = tape.conv2d(x, w, None, spec).unwrap();
    let v = tape.value(y);
    let support: Vec<usize> = (0..15).filter(|&c| v.at(&[0, 0, 7, c]) != 0.0).collect();
    assert_eq!(support.last().unwrap() - support.first().unwrap() + 1, 5);
}

#[test]
fn tnet_contract_tokens_and_taps() {
    let m = build_tnet::<f32>(3).unwrap();
    assert_contract(&m);
    let (_, taps) = m.trace(&noise_batch(2, 6)).unwrap();
    assert_eq!(tap_shape(&taps, "tokens"), vec![2, 64, 64]);
    let names: Vec<&str> = taps
        .iter()
        .map(|(n, _)| n.as_str())
        .filter(|n| n.starts_with("tap"))
        .collect();
    assert_eq!(names, ["tap2", "tap4", "tap6", "tap8"]);
    for n in names {
        assert_eq!(tap_shape(&taps, n), vec![2, 64, 8, 8]);
    }
    let cfg = TNetConfig::default();
    assert_eq!((cfg.num_units, cfg.num_taps()), (8, 4));
}

#[test]
fn tnet_residual_identity_with_zeroed_blocks() {
    let mut m = build_tnet::<f64>(4).unwrap();
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        let name = m.params.name(id).to_string();
        if name.contains(".attn.") || name.contains(".fc") {
            let shape = m.params.get(id).shape().to_vec();
            m.params.set(id, Tensor::zeros(shape)).unwrap();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::new([1, 1, 128, 128], (0..128 * 128).map(|_| rng.random::<f64>()).collect()).unwrap();
    let (_, taps) = m.trace(&x).unwrap();
    let tap2 = taps.iter().find(|(n, _)| n == "tap2").unwrap().1.clone();
    for name in ["tap4", "tap6", "tap8"] {
        let t = &taps.iter().find(|(n, _)| n == name).unwrap().1;
        for (a, b) in t.data().iter().zip(tap2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn builders_are_deterministic() {
    for kind in ModelKind::ALL {
        let a = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 11)).unwrap();
        let b = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 11)).unwrap();
        let c = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 12)).unwrap();
        assert_eq!(a.params.tensors(), b.params.tensors());
        assert_ne!(a.params.tensors(), c.params.tensors());
        let names: Vec<&str> = a.params.iter().map(|(n, _)| n).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
    }
}

#[test]
fn arch_config_toml_roundtrip() {
    for kind in ModelKind::ALL {
        let cfg = ArchConfig::default_for(kind, 5);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ArchConfig::from_toml(&text).unwrap(), cfg);
    }
}

fn maps_of(entries: &[(&str, Tensor<f64>)]) -> BTreeMap<String, Tensor<f64>> {
    entries.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

fn random_probs(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new([n, 1, 8, 8], (0..n * 64).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn degenerate_ensemble_is_binarised_model() {
    let t = random_probs(3, 1);
    let maps = maps_of(&[("tnet", t.clone())]);
    let got = enet_predict(&maps, &EnsembleSpec::single("tnet")).unwrap();
    let expect: Vec<u8> = t.data().iter().map(|&p| u8::from(p > 0.5)).collect();
    assert_eq!(got.data(), &expect[..]);
}

#[test]
fn weight_search_single_model_and_dominance() {
    let truth_probs = random_probs(4, 2);
    let truths = Masks::from_probs(truth_probs.data(), 4, 8, 8, 0.5).unwrap();
    let maps = maps_of(&[("a", truth_probs.clone())]);
    let (spec, table) = ensemble_weight_search(&maps, &truths, 0.1, 0.5).unwrap();
    assert_eq!(spec.weights["a"], 1.0);
    assert_eq!(table.len(), 1);

    // Model "a" reproduces the truth exactly; "b" is noise.
    let maps = maps_of(&[("a", truth_probs), ("b", random_probs(4, 3))]);
    let (spec, table) = ensemble_weight_search(&maps, &truths, 0.1, 0.5).unwrap();
    assert_eq!(spec.weights["a"], 1.0);
    assert_eq!(table.len(), 11);
    let best = table.iter().map(|g| g.miou).fold(f64::MIN, f64::max);
    let pure: Vec<&GridScore> = table.iter().filter(|g| g.weights.contains(&1.0)).collect();
    assert!(pure.iter().all(|g| best >= g.miou));
    assert!(ensemble_weight_search(&maps, &truths, 0.3, 0.5).is_err());
}

#[test]
fn ensemble_of_independent_models_matches_manual_average() {
    let (a, b) = (random_probs(2, 4), random_probs(2, 5));
    let maps = maps_of(&[("unet", a.clone()), ("tnet", b.clone())]);
    let spec = EnsembleSpec::new(BTreeMap::from([("unet".into(), 0.2), ("tnet".into(), 0.8)]), 0.5).unwrap();
    let got = enet_predict(&maps, &spec).unwrap();
    for (i, (&pa, &pb)) in a.data().iter().zip(b.data()).enumerate() {
        assert_eq!(got.data()[i], u8::from(0.8 * pb + 0.2 * pa > 0.5));
    }
    let truths = Masks::from_probs(a.data(), 2, 8, 8, 0.5).unwrap();
    assert!(mean_metrics_of(&truths, &got) <= 1.0);
}

fn mean_metrics_of(t: &Masks, p: &Masks) -> f64 {
    mean_metrics((0..t.count).map(|i| (t.patch(i), p.patch(i)))).unwrap().0
}
