//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs sequentially under a custom harness so that latency measurements
//! are not disturbed by concurrently running tests. Pass criterion numbers
//! as arguments to run a subset, e.g. `cargo test --test acceptance -- 1 7`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use dseg::arch::*;
use dseg::bench::decompose_enet;
use dseg::data::*;
use dseg::engine::*;
use dseg::geometry::*;
use dseg::metrics::*;
use dseg::nn::*;
use dseg::phantom::*;
use dseg::tensor::gradcheck::{grad_check, GradCheckOptions};
use dseg::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/common/mod.rs"]
mod common;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || {
        format!("{what} took {:.0} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Distinct values at least `0.01` apart, so no finite-difference step can
/// reorder a pooling window.
fn spaced_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> dseg::Result<Var> {
    let w = tape.constant(rand_tensor(tape.shape(y), seed));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- 1

type Program = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> dseg::Result<Var>>;

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let dilated = Conv2dSpec::new(2, 3, 3).with_dilation(2).with_padding(2);
    let conv = Conv2dSpec::same(2, 3, 3);
    let up = TransposedConv2dSpec::upsample2(3, 2);
    let attn = AttentionSpec::new(6, 2).map_err(|e| e.to_string())?;
    let embed = PatchEmbedSpec {
        image: 8,
        patch: 4,
        embed_dim: 6,
    };
    let pe = fourier_positional_encoding(4, 6).map_err(|e| e.to_string())?;
    let mut cases: Vec<(String, Program, Vec<Tensor<f64>>)> = vec![
        (
            "conv2d".into(),
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), conv)?;
                weighted_sum(t, y, 1)
            }),
            vec![
                rand_tensor(&[2, 2, 6, 6], 2),
                rand_tensor(&conv.weight_shape(), 3),
                rand_tensor(&[3], 4),
            ],
        ),
        (
            "dilated conv".into(),
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), dilated)?;
                weighted_sum(t, y, 5)
            }),
            vec![
                rand_tensor(&[2, 2, 7, 7], 6),
                rand_tensor(&dilated.weight_shape(), 7),
                rand_tensor(&[3], 8),
            ],
        ),
        (
            "transposed conv".into(),
            Box::new(move |t, v| {
                let y = t.transposed_conv2d(v[0], v[1], Some(v[2]), up)?;
                weighted_sum(t, y, 9)
            }),
            vec![
                rand_tensor(&[2, 3, 4, 4], 10),
                rand_tensor(&up.weight_shape(), 11),
                rand_tensor(&[2], 12),
            ],
        ),
        (
            "max-pool".into(),
            Box::new(|t, v| {
                let y = t.max_pool2d(v[0], 2)?;
                weighted_sum(t, y, 13)
            }),
            vec![spaced_tensor(&[2, 2, 6, 6], 14)],
        ),
        (
            "MHSA".into(),
            Box::new(move |t, v| {
                let w = AttentionWeights {
                    wq: v[1],
                    wk: v[2],
                    wv: v[3],
                    wo: v[4],
                };
                let y = multi_head_self_attention(t, v[0], &attn, &w)?;
                weighted_sum(t, y, 15)
            }),
            vec![
                rand_tensor(&[2, 4, 6], 16),
                rand_tensor(&[6, 6], 17),
                rand_tensor(&[6, 6], 18),
                rand_tensor(&[6, 6], 19),
                rand_tensor(&[6, 6], 20),
            ],
        ),
        (
            "layer-norm".into(),
            Box::new(|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                weighted_sum(t, y, 21)
            }),
            vec![rand_tensor(&[12, 8], 22), rand_tensor(&[8], 23), rand_tensor(&[8], 24)],
        ),
        (
            "patch-embed".into(),
            Box::new(move |t, v| {
                let y = patch_embed(t, v[0], &embed, v[1], v[2], &pe)?;
                weighted_sum(t, y, 25)
            }),
            vec![
                rand_tensor(&[1, 1, 8, 8], 26),
                rand_tensor(&[16, 6], 27),
                rand_tensor(&[6], 28),
            ],
        ),
        (
            "pyramid-pool".into(),
            Box::new(|t, v| {
                let y = pyramid_pool(t, v[0], &[1, 2], &[(v[1], v[2]), (v[3], v[4])])?;
                weighted_sum(t, y, 29)
            }),
            vec![
                rand_tensor(&[2, 2, 8, 8], 30),
                rand_tensor(&[2, 2, 1, 1], 31),
                rand_tensor(&[2], 32),
                rand_tensor(&[2, 2, 1, 1], 33),
                rand_tensor(&[2], 34),
            ],
        ),
    ];
    for kind in [
        LossKind::Bce,
        LossKind::BalancedBce,
        LossKind::Tversky,
        LossKind::FocalTversky,
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + kind as u64);
        let y: Vec<f64> = (0..128).map(|_| f64::from(rng.random_bool(0.4))).collect();
        let p: Vec<f64> = (0..128).map(|_| rng.random_range(0.1..0.9)).collect();
        let y = Tensor::from_f64([2, 1, 8, 8], &y).unwrap();
        let params = LossParams::default_for(kind);
        cases.push((
            format!("{} loss", kind.name()),
            Box::new(move |t, v| {
                let yv = t.constant(y.clone());
                loss(t, kind, params, yv, v[0])
            }),
            vec![Tensor::from_f64([2, 1, 8, 8], &p).unwrap()],
        ));
    }
    let opts = GradCheckOptions::default();
    let mut worst: f64 = 0.0;
    for (name, f, inputs) in &cases {
        let r = grad_check(f, inputs, opts).map_err(|e| format!("{name}: {e}"))?;
        ensure(r.coords.len() >= 100, || {
            format!("{name}: only {} coordinates", r.coords.len())
        })?;
        ensure(r.passed, || format!("{name}: {}", r.summary()))?;
        worst = worst.max(r.max_rel_error);
    }
    within(start.elapsed(), 120, "gradient suite")?;
    Ok(format!(
        "{} programs, >=100 coords each, worst rel err {worst:.2e} (tol {:.0e})",
        cases.len(),
        opts.tol
    ))
}

// ---------------------------------------------------------------- 2

fn eval_loss(f: impl Fn(&mut Tape<f64>, Var, Var) -> dseg::Result<Var>, y: &[f64], p: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let yv = tape.constant(Tensor::from_f64([y.len()], y).unwrap());
    let pv = tape.constant(Tensor::from_f64([p.len()], p).unwrap());
    let l = f(&mut tape, yv, pv).unwrap();
    tape.value(l).item().unwrap()
}

/// Plain six-loop cross-correlation, zero bias.
fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, spec: Conv2dSpec) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (spec.out_channels, spec.kernel.0, spec.kernel.1);
    let (s, d, p) = (spec.stride as isize, spec.dilation as isize, spec.padding as isize);
    let ho = (h as isize + 2 * p - d * (kh as isize - 1) - 1) / s + 1;
    let wo = (wd as isize + 2 * p - d * (kw as isize - 1) - 1) / s + 1;
    let mut out = Vec::with_capacity(n * o * (ho * wo) as usize);
    for ni in 0..n {
        for oi in 0..o {
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = yo * s + ki as isize * d - p;
                                let ix = xo * s + kj as isize * d - p;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < wd as isize {
                                    acc += x.at(&[ni, ci, iy as usize, ix as usize]) * w.at(&[oi, ci, ki, kj]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = [0.0f64; 4];
    for case in 0..25 {
        let n = 32 + case;
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let inter = dot(&y, &p);
        let soft_dice = 2.0 * inter / (y.iter().sum::<f64>() + p.iter().sum::<f64>());
        worst[0] = worst[0].max((eval_loss(|t, y, p| tversky_loss(t, y, p, 0.5), &y, &p) + soft_dice).abs());
        let bce = eval_loss(bce_loss, &y, &p);
        let bal = eval_loss(|t, y, p| balanced_bce_loss(t, y, p, 0.5), &y, &p);
        worst[1] = worst[1].max((bal - 0.5 * bce).abs());

        let c = ConfusionCounts {
            tp: rng.random_range(0..1000),
            fp: rng.random_range(0..1000),
            fn_: rng.random_range(1..1000),
            tn: rng.random_range(0..1000),
        };
        let j = iou(c);
        worst[2] = worst[2].max((dsc(c) - 2.0 * j / (1.0 + j)).abs());

        let mut spec = TransposedConv2dSpec::upsample2(2 + case % 3, 1 + case % 2);
        if case % 2 == 1 {
            spec.kernel = (3, 3);
            spec.padding = 1;
            spec.output_padding = 1;
        }
        let (h, w) = (3 + case % 4, 4 + case % 3);
        let (ho, wo) = spec.output_size(h, w).map_err(|e| e.to_string())?;
        let weight = rand_tensor(&spec.weight_shape(), 100 + case as u64);
        let x = rand_tensor(&[2, spec.out_channels, ho, wo], 200 + case as u64);
        let yt = rand_tensor(&[2, spec.in_channels, h, w], 300 + case as u64);
        let mut tape = Tape::new();
        let (yv, wv) = (tape.constant(yt.clone()), tape.constant(weight.clone()));
        let t = tape.transposed_conv2d(yv, wv, None, spec).map_err(|e| e.to_string())?;
        let lhs = dot(&direct_conv(&x, &weight, spec.adjoint()), yt.data());
        let rhs = dot(x.data(), tape.value(t).data());
        worst[3] = worst[3].max((lhs - rhs).abs());
    }
    ensure(worst[..3].iter().all(|&e| e <= 1e-12) && worst[3] <= 1e-10, || {
        format!("max errors {:?}", worst.map(|e| format!("{e:.1e}")))
    })?;
    Ok(format!(
        "25 inputs each; tversky {:.1e}, balanced-bce {:.1e}, dsc/iou {:.1e}, adjoint {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ---------------------------------------------------------------- 3

fn noise_batch(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        [n, 1, 128, 128],
        (0..n * 128 * 128).map(|_| rng.random::<f32>()).collect(),
    )
    .unwrap()
}

fn tap<'a>(taps: &'a [(String, Tensor<f32>)], name: &str) -> Result<&'a [usize], String> {
    taps.iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t.shape())
        .ok_or_else(|| format!("missing tap {name}"))
}

fn shapes() -> Verdict {
    let start = Instant::now();
    let x = noise_batch(2, 3);
    let unet = build_unet::<f32>(1).map_err(|e| e.to_string())?;
    let ynet = build_ynet::<f32>(1).map_err(|e| e.to_string())?;
    let tnet = build_tnet::<f32>(1).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for m in [&unet, &ynet, &tnet] {
        let (y, taps) = m.trace(&x).map_err(|e| e.to_string())?;
        ensure(y.shape() == [2, 1, 128, 128], || {
            format!("{} output {:?}", m.name(), y.shape())
        })?;
        ensure(y.data().iter().all(|&v| v > 0.0 && v < 1.0), || {
            format!("{} output leaves (0, 1)", m.name())
        })?;
        match m.kind() {
            ModelKind::Unet => {
                let b = tap(&taps, "bottleneck")?;
                ensure(b == [2, 256, 8, 8], || format!("U-Net bottleneck {b:?}"))?;
                notes.push(format!("unet bottleneck {b:?}"));
            }
            ModelKind::Ynet => {
                let d = tap(&taps, "dilated_terminal")?;
                ensure(d[1..] == [16, 8, 8], || format!("Y-Net dilated branch {d:?}"))?;
                notes.push(format!("ynet dilated {:?}", &d[1..]));
            }
            ModelKind::Tnet => {
                let t = tap(&taps, "tokens")?;
                ensure(t == [2, 64, 64], || format!("T-Net tokens {t:?}"))?;
                let skips = taps.iter().filter(|(n, _)| n.starts_with("tap")).count();
                let units = TNetConfig::default().num_units;
                ensure(skips == 4 && units == 8, || {
                    format!("T-Net {units} units, {skips} taps")
                })?;
                notes.push(format!("tnet tokens {:?}, {units} units, {skips} taps", &t[1..]));
            }
        }
    }
    within(start.elapsed(), 60, "shape suite")?;
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 4

fn overfit_check() -> Verdict {
    let start = Instant::now();
    let p = generate_phantom(&PhantomConfig::default()).map_err(|e| e.to_string())?;
    let fg: Vec<PatchSample> = phantom_to_patches(&p, Plane::Xy, 128)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|s| s.mask.iter().filter(|&&m| m == 1).count() > 500)
        .take(8)
        .collect();
    ensure(fg.len() == 8, || format!("only {} foreground patches", fg.len()))?;
    let mut notes = Vec::new();
    for kind in [ModelKind::Tnet, ModelKind::Unet] {
        let mut m = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 1)).map_err(|e| e.to_string())?;
        let r = overfit(&mut m, &fg, LossKind::Bce, 1e-3, 3, (0.95, 500, 10)).map_err(|e| e.to_string())?;
        ensure(r.reached, || {
            format!("{} stopped at dice {:.4} after {} steps", kind.name(), r.dice, r.steps)
        })?;
        notes.push(format!("{} dice {:.3} at step {}", kind.name(), r.dice, r.steps));
    }
    within(start.elapsed(), 600, "overfit check")?;
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 5

const E2E_STRIDE: usize = 80;

struct Trained {
    models: BTreeMap<String, ModelGraph<f32>>,
    val: Vec<PatchSample>,
    test: Vec<PatchSample>,
    phantom: Phantom,
}

fn end_to_end(state: &mut Option<Trained>) -> Verdict {
    let start = Instant::now();
    let p = generate_phantom(&PhantomConfig::default()).map_err(|e| e.to_string())?;
    let patches = phantom_to_patches(&p, Plane::Xy, E2E_STRIDE).map_err(|e| e.to_string())?;
    let baseline = volume_patches(
        &p.volume,
        Some(&p.threshold_baseline()),
        Plane::Xy,
        PATCH,
        E2E_STRIDE,
        0,
    )
    .map_err(|e| e.to_string())?;
    let ids: Vec<usize> = (0..patches.len()).collect();
    let split = split_dataset(&ids, &SplitSpec::default()).map_err(|e| e.to_string())?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| patches[i].clone()).collect::<Vec<_>>();
    let (train_set, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let (base_miou, _) = mean_metrics(
        split
            .test
            .iter()
            .map(|&i| (&patches[i].mask[..], &baseline[i].mask[..])),
    )
    .map_err(|e| e.to_string())?;
    let test_refs: Vec<&PatchSample> = test.iter().collect();
    let mut notes = vec![format!(
        "{} patches ({}/{}/{}), baseline {base_miou:.4}",
        patches.len(),
        train_set.len(),
        val.len(),
        test.len()
    )];
    let mut models = BTreeMap::new();
    let mut failures = Vec::new();
    for (kind, epochs) in [(ModelKind::Unet, 4), (ModelKind::Ynet, 4), (ModelKind::Tnet, 20)] {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::desk(kind, epochs, 5)
        };
        let m = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 1)).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let out = train(&m, &train_set, &val, &cfg, |_| {}).map_err(|e| e.to_string())?;
        let (_, miou, _) =
            evaluate_samples(&out.model, &test_refs, cfg.loss, cfg.loss_params, 0.5, 8).map_err(|e| e.to_string())?;
        notes.push(format!(
            "{} {miou:.4} ({epochs} ep, {:.0} s)",
            kind.name(),
            t.elapsed().as_secs_f64()
        ));
        if miou < 0.70 || miou < base_miou + 0.05 {
            failures.push(format!("{} test mIoU {miou:.4}", kind.name()));
        }
        models.insert(kind.name().to_string(), out.model);
    }
    *state = Some(Trained {
        models,
        val,
        test,
        phantom: p,
    });
    within(start.elapsed(), 7200, "end-to-end run")?;
    ensure(failures.is_empty(), || {
        format!(
            "{} below max(0.70, baseline + 0.05 = {:.4}); {}",
            failures.join(", "),
            base_miou + 0.05,
            notes.join(", ")
        )
    })?;
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- 6

fn stacked(m: &ModelGraph<f32>, samples: &[PatchSample]) -> Result<Tensor<f32>, String> {
    let refs: Vec<&PatchSample> = samples.iter().collect();
    let probs = predict_samples(m, &refs, INFER_BATCH).map_err(|e| e.to_string())?;
    Tensor::new([samples.len(), 1, PATCH, PATCH], probs).map_err(|e| e.to_string())
}

fn truth_masks(samples: &[PatchSample]) -> Result<Masks, String> {
    Masks::new(
        samples.len(),
        PATCH,
        PATCH,
        samples.iter().flat_map(|s| s.mask.iter().copied()).collect(),
    )
    .map_err(|e| e.to_string())
}

fn ensemble_properties(state: &Option<Trained>) -> Verdict {
    let fresh;
    let (models, val, test, volume, source) = match state {
        Some(t) => (&t.models, &t.val, &t.test, &t.phantom.volume, "trained"),
        None => {
            let p = generate_phantom(&PhantomConfig {
                dims: [4, 256, 256],
                electrode_thickness: 32,
                ..PhantomConfig::default()
            })
            .map_err(|e| e.to_string())?;
            let patches = phantom_to_patches(&p, Plane::Xy, 128).map_err(|e| e.to_string())?;
            let models: BTreeMap<String, ModelGraph<f32>> = [ModelKind::Unet, ModelKind::Ynet, ModelKind::Tnet]
                .into_iter()
                .map(|k| {
                    (
                        k.name().to_string(),
                        ModelGraph::build(ArchConfig::default_for(k, 1)).unwrap(),
                    )
                })
                .collect();
            fresh = (models, patches[..8].to_vec(), patches[8..].to_vec(), p.volume);
            (&fresh.0, &fresh.1, &fresh.2, &fresh.3, "untrained")
        }
    };
    let mut maps = BTreeMap::new();
    for (name, m) in models {
        maps.insert(name.clone(), stacked(m, val)?);
    }
    let (spec, table) = ensemble_weight_search(&maps, &truth_masks(val)?, 0.1, 0.5).map_err(|e| e.to_string())?;
    let chosen: Vec<f64> = maps.keys().map(|k| spec.weights[k]).collect();
    let best = table
        .iter()
        .find(|g| g.weights == chosen)
        .ok_or("chosen weights are not a grid point")?;
    let pure: Vec<&GridScore> = table.iter().filter(|g| g.weights.contains(&1.0)).collect();
    ensure(pure.len() == maps.len(), || format!("{} pure grid points", pure.len()))?;
    ensure(pure.iter().all(|g| best.miou >= g.miou), || {
        "a pure model beats the chosen point".into()
    })?;
    let best_pure = pure.iter().map(|g| g.miou).fold(f64::MIN, f64::max);

    let tnet = &models["tnet"];
    let tmap = stacked(tnet, test)?;
    let single = EnsembleSpec::single("tnet");
    let via_enet =
        enet_predict(&BTreeMap::from([("tnet".to_string(), tmap.clone())]), &single).map_err(|e| e.to_string())?;
    let direct = Masks::from_probs(tmap.data(), test.len(), PATCH, PATCH, 0.5).map_err(|e| e.to_string())?;
    ensure(via_enet == direct, || {
        "{tnet: 1.0} patch masks differ from T-Net".into()
    })?;
    let ens = Ensemble::new(BTreeMap::from([("tnet".to_string(), tnet.clone())]), single).map_err(|e| e.to_string())?;
    let sub = crop_roi(volume, [0, 0, 0], [2, volume.dims[1], volume.dims[2]]).map_err(|e| e.to_string())?;
    let a = predict_volume(&ens, &sub, Plane::Xy, INFER_STRIDE, 0.5).map_err(|e| e.to_string())?;
    let b = predict_volume(tnet, &sub, Plane::Xy, INFER_STRIDE, 0.5).map_err(|e| e.to_string())?;
    ensure(a == b, || "{tnet: 1.0} volume masks differ from T-Net".into())?;
    Ok(format!(
        "{source} models, {} grid points, chosen {:?} mIoU {:.4} >= best pure {best_pure:.4}; {{tnet: 1.0}} bitwise on {} patches and a {:?} volume",
        table.len(),
        spec.weights,
        best.miou,
        test.len(),
        sub.dims
    ))
}

// ---------------------------------------------------------------- 7

fn geometry() -> Verdict {
    let rms = common::checkerboard_rectification_rms();
    ensure(rms <= 0.5, || format!("checkerboard corner RMS {rms:.3} px"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dlt_err: f64 = 0.0;
    let mut quads = 0;
    while quads < 50 {
        let (w, h) = (rng.random_range(2..600usize), rng.random_range(2..600usize));
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-40.0..40.0);
        let corners = [
            [10.0 + jitter(&mut rng), 10.0 + jitter(&mut rng)],
            [700.0 + jitter(&mut rng), 15.0 + jitter(&mut rng)],
            [690.0 + jitter(&mut rng), 640.0 + jitter(&mut rng)],
            [5.0 + jitter(&mut rng), 650.0 + jitter(&mut rng)],
        ];
        let set = CornerSet {
            corners,
            width: w,
            height: h,
        };
        let hm = estimate_homography(&set).map_err(|e| e.to_string())?;
        for (c, t) in corners.iter().zip(set.targets()) {
            let (x, y) = hm.apply(c[0], c[1]);
            dlt_err = dlt_err.max((x - t[0]).hypot(y - t[1]));
        }
        quads += 1;
    }
    ensure(dlt_err <= 1e-8, || format!("DLT target error {dlt_err:.2e} px"))?;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [3, 5, 7];
        let u8s = VolumeGrid::new(dims, 1.0, VoxelData::U8((0..105).map(|_| rng.random()).collect())).unwrap();
        let u16s = VolumeGrid::new(dims, 1.0, VoxelData::U16((0..105).map(|_| rng.random()).collect())).unwrap();
        for v in [u8s, u16s] {
            ensure(invert_grayscale(&invert_grayscale(&v)) == v, || {
                "inversion is not an involution".into()
            })?;
        }
    }
    Ok(format!(
        "checkerboard RMS {rms:.3} px, DLT max error {dlt_err:.1e} px over {quads} quads, inversion involutive on 40 integer volumes"
    ))
}

// ---------------------------------------------------------------- 8

fn roundtrips() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (rows, cols) = (256, 384);
    let image: Vec<f32> = (0..rows * cols).map(|_| rng.random()).collect();
    let view = SliceView {
        rows,
        cols,
        image: &image,
        mask: None,
    };
    let tiles = patchify(view, PATCH, PATCH, 0, 0).map_err(|e| e.to_string())?;
    let back = stitch(
        tiles.iter().map(|t| ((t.meta.y, t.meta.x), &t.image[..])),
        PATCH,
        rows,
        cols,
    )
    .map_err(|e| e.to_string())?;
    ensure(back.iter().zip(&image).all(|(a, b)| a.to_bits() == b.to_bits()), || {
        "patchify/stitch is not bitwise".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let x = noise_batch(1, 9);
    for kind in [ModelKind::Unet, ModelKind::Ynet, ModelKind::Tnet] {
        let m = ModelGraph::<f32>::build(ArchConfig::default_for(kind, 4)).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{}.ckpt", kind.name()));
        save_checkpoint(&path, &m, None, None).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?.model;
        let (a, b) = (m.predict(&x).unwrap(), loaded.predict(&x).unwrap());
        ensure(
            a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()),
            || format!("{} forward differs after checkpoint roundtrip", kind.name()),
        )?;
    }

    let ids: Vec<usize> = (0..4433).collect();
    let spec = SplitSpec {
        seed: 17,
        ..SplitSpec::default()
    };
    let a = split_dataset(&ids, &spec).map_err(|e| e.to_string())?;
    let b = split_dataset(&ids, &spec).map_err(|e| e.to_string())?;
    ensure(a.sizes() == (3547, 443, 443), || format!("split sizes {:?}", a.sizes()))?;
    ensure(a == b, || "split is not seed-deterministic".into())?;
    let c = split_dataset(&ids, &SplitSpec { seed: 18, ..spec }).map_err(|e| e.to_string())?;
    ensure(a != c, || "different seeds give the same split".into())?;
    Ok(format!(
        "{} tiles stitched bitwise; 3 checkpoints forward-identical; 4433 -> {:?}, deterministic",
        tiles.len(),
        a.sizes()
    ))
}

// ---------------------------------------------------------------- 9

fn benchmark_harness() -> Verdict {
    let p = generate_phantom(&PhantomConfig {
        dims: [2, 256, 256],
        electrode_thickness: 32,
        ..PhantomConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let patches = phantom_to_patches(&p, Plane::Xy, PATCH).map_err(|e| e.to_string())?;
    let images: Vec<&[f32]> = patches.iter().map(|s| &s.image[..]).collect();
    let models: BTreeMap<String, ModelGraph<f32>> = [ModelKind::Unet, ModelKind::Ynet, ModelKind::Tnet]
        .into_iter()
        .map(|k| {
            (
                k.name().to_string(),
                ModelGraph::build(ArchConfig::default_for(k, 2)).unwrap(),
            )
        })
        .collect();
    let third = 1.0 / 3.0;
    let spec =
        EnsembleSpec::new(models.keys().map(|k| (k.clone(), third)).collect(), 0.5).map_err(|e| e.to_string())?;
    let ens = Ensemble::new(models.clone(), spec).map_err(|e| e.to_string())?;
    let d = decompose_enet(&ens, &images, 5, 30).map_err(|e| e.to_string())?;
    let ratio = d.ratio();
    ensure(d.enet.mean_ms >= d.max_component_ms(), || {
        format!(
            "E-Net {:.2} ms below slowest component {:.2} ms",
            d.enet.mean_ms,
            d.max_component_ms()
        )
    })?;
    ensure((0.8..=1.2).contains(&ratio), || {
        format!("E-Net {:.2} ms vs predicted {:.2} ms", d.enet.mean_ms, d.predicted_ms())
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut ds = PatchDataset::default();
    for s in &patches {
        ds.push(s.clone(), SplitTag::Test);
    }
    ds.save(&dir.path().join("ds")).map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("tnet.ckpt");
    save_checkpoint(&ckpt, &models["tnet"], None, None).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_dseg"))
        .args(["evaluate", "--model"])
        .arg(&ckpt)
        .arg("--in")
        .arg(dir.path().join("ds"))
        .args(["--reps", "30"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    ensure(header == TABLE_HEADER, || format!("evaluate header {header:?}"))?;
    let row = MetricsRow::parse(lines.next().unwrap_or("")).map_err(|e| e.to_string())?;
    ensure(row.latency_ms.is_some() && row.patch == PATCH, || {
        format!("evaluate row {row:?}")
    })?;
    let parts: Vec<String> = d
        .components
        .iter()
        .map(|c| format!("{} {:.1}", c.model, c.mean_ms))
        .collect();
    Ok(format!(
        "E-Net {:.1} ms vs components [{}] + combination {:.2} ms (ratio {ratio:.3}); evaluate columns {}",
        d.enet.mean_ms,
        parts.join(", "),
        d.combination_ms,
        header.join("|")
    ))
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let run_it = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut trained: Option<Trained> = None;
    let mut failed = 0;
    let mut ran = 0;
    for n in 1..=9 {
        if !run_it(n) {
            continue;
        }
        let (title, verdict, secs) = {
            let start = Instant::now();
            let mut call = || -> (&str, Verdict) {
                match n {
                    1 => ("gradient suite", gradient_suite()),
                    2 => ("algebraic identities", identities()),
                    3 => ("shape contracts", shapes()),
                    4 => ("overfit check", overfit_check()),
                    5 => ("phantom end-to-end", end_to_end(&mut trained)),
                    6 => ("ensemble properties", ensemble_properties(&trained)),
                    7 => ("geometry", geometry()),
                    8 => ("pipeline roundtrips", roundtrips()),
                    _ => ("benchmark harness", benchmark_harness()),
                }
            };
            let (title, verdict) = match catch_unwind(AssertUnwindSafe(&mut call)) {
                Ok(r) => r,
                Err(e) => {
                    let msg = e
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    ("criterion", Err(format!("panicked: {msg}")))
                }
            };
            (title, verdict, start.elapsed().as_secs_f64())
        };
        ran += 1;
        match verdict {
            Ok(detail) => println!("PASS [{n}] {title}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n}] {title}: {detail} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
