use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dseg::arch::{ensemble_weight_search, ArchConfig, EnsembleSpec, GridScore, ModelGraph, PATCH};
use dseg::bench::{bench_latency, decompose_enet};
use dseg::data::{split_dataset, volume_patches, PatchDataset, PatchSample, SplitSpec, SplitTag};
use dseg::engine::{
    load_checkpoint, predict_samples, predict_volume, quantify_dendrites, save_checkpoint, train, Ensemble, Segmenter,
    TrainConfig, INFER_BATCH,
};
use dseg::geometry::{
    crop_roi, estimate_homography, invert_grayscale, rectify_plane, Interp, PlaneCorners, VolumeGrid,
};
use dseg::metrics::{confusion, dsc, iou, Masks, MetricsRow};
use dseg::phantom::{generate_phantom, phantom_to_patches, PhantomConfig, GENERATOR};
use dseg::{Error, Result, Tensor};

use crate::{pgm, Command, Models};

/// Patches timed by `bench` and `evaluate --reps`.
const BENCH_PATCHES: usize = 16;
pub const BENCH_HEADER: &str = "model\tmean_ms\tstd_ms\tsamples\tthreads\tprecision";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Rectify(a) => {
            let v = VolumeGrid::load(&a.io.input)?;
            let pc = PlaneCorners::from_toml(&fs::read_to_string(&a.corners)?)?;
            let h = estimate_homography(&pc.set)?;
            let interp = if a.nearest { Interp::Nearest } else { Interp::Bilinear };
            let out = rectify_plane(&v, pc.plane, &h, (pc.set.width, pc.set.height), interp)?;
            print_saved(&out.save(&a.io.out)?);
        }
        Command::Invert(a) => print_saved(&invert_grayscale(&VolumeGrid::load(&a.input)?).save(&a.out)?),
        Command::Crop(a) => print_saved(&crop_roi(&VolumeGrid::load(&a.io.input)?, a.lo, a.hi)?.save(&a.io.out)?),
        Command::Phantom(a) => {
            let mut cfg = match &a.config {
                Some(p) => PhantomConfig::from_toml(&fs::read_to_string(p)?)?,
                None => PhantomConfig::default(),
            };
            cfg.seed = require_seed(a.seed)?;
            let p = generate_phantom(&cfg)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("phantom.toml"), cfg.to_toml()?)?;
            p.volume.save_generated(&a.out.join("volume"), GENERATOR)?;
            p.mask.save_generated(&a.out.join("mask"), GENERATOR)?;
            println!(
                "dendrite_voxels={}\thollow_voxels={}",
                p.dendrite_voxels, p.hollow_voxels
            );
        }
        Command::Patchify(a) => {
            let v = VolumeGrid::load(&a.input)?;
            let m = VolumeGrid::load(&a.mask)?;
            let samples = volume_patches(&v, Some(&m), a.plane, PATCH, a.stride, 0)?;
            let split = split_dataset(
                &samples,
                &SplitSpec {
                    seed: require_seed(a.seed)?,
                    ..SplitSpec::default()
                },
            )?;
            let mut ds = PatchDataset::default();
            for tag in SplitTag::ALL {
                for s in split.part(tag) {
                    ds.push(s.clone(), tag);
                }
            }
            ds.save(&a.out)?;
            let (tr, va, te) = split.sizes();
            println!("train={tr}\tval={va}\ttest={te}");
        }
        Command::Train(a) => {
            let seed = require_seed(a.seed)?;
            let mut cfg = match (&a.config, a.model) {
                (Some(p), _) => TrainConfig::from_toml(&fs::read_to_string(p)?)?,
                (None, Some(kind)) => TrainConfig::desk(kind, 1, seed),
                (None, None) => return Err(Error::InvalidArgument("train needs --config or --model".into())),
            };
            cfg.seed = seed;
            if let Some(kind) = a.model {
                cfg.model = kind;
            }
            if let Some(e) = a.epochs {
                cfg.epochs = e;
            }
            let ds = PatchDataset::load(&a.input)?;
            let owned = |tag| ds.split(tag).into_iter().cloned().collect::<Vec<PatchSample>>();
            let model = ModelGraph::<f32>::build(ArchConfig::default_for(cfg.model, seed))?;
            let out = train(&model, &owned(SplitTag::Train), &owned(SplitTag::Val), &cfg, |r| {
                eprintln!(
                    "epoch {}\ttrain_loss={:.4}\tval_dice={:.4}\t{:.1}s",
                    r.epoch, r.train_loss, r.val_dice, r.wall_seconds
                );
            })?;
            fs::create_dir_all(&a.out)?;
            save_checkpoint(&a.out.join("model.ckpt"), &out.model, Some(&cfg), Some(&out.history))?;
            fs::write(a.out.join("history.tsv"), out.history.to_tsv())?;
            println!("best_epoch={}", out.best_epoch);
        }
        Command::Predict(a) => {
            let (target, spec) = load_target(&a.models)?;
            let thr = a.threshold.or(spec.as_ref().map(|s| s.threshold)).unwrap_or(0.5);
            let v = VolumeGrid::load(&a.input)?;
            let mask = predict_volume(target.as_ref(), &v, a.plane, a.stride, thr)?;
            fs::create_dir_all(&a.out)?;
            mask.save(&a.out.join("mask"))?;
            if !a.no_images {
                pgm::export_slices(&mask, a.plane, &a.out.join("slices"))?;
            }
            let r = quantify_dendrites(&mask, None)?;
            println!(
                "voxels={}\tvolume_um3={:.3}\tfraction={:.6}",
                r.voxels, r.volume_um3, r.fraction
            );
        }
        Command::Evaluate(a) => {
            let ds = PatchDataset::load(&a.input)?;
            let samples = nonempty(ds.split(a.split), a.split)?;
            let (models, spec) = load_models(&a.models)?;
            let mut targets: Vec<(String, Box<dyn Segmenter>, f64)> = Vec::new();
            for (name, m) in &models {
                targets.push((name.clone(), Box::new(m.clone()), a.threshold.unwrap_or(0.5)));
            }
            if let Some(spec) = spec {
                let thr = a.threshold.unwrap_or(spec.threshold);
                targets.push(("enet".into(), Box::new(Ensemble::new(models, spec)?), thr));
            }
            let images: Vec<&[f32]> = samples.iter().take(BENCH_PATCHES).map(|s| &s.image[..]).collect();
            println!("{}", MetricsRow::header());
            for (name, target, thr) in &targets {
                let (miou, mdsc) = score(target.as_ref(), &samples, *thr)?;
                let latency_ms = match a.reps {
                    Some(reps) => Some(bench_latency::<f32>(name, target.as_ref(), &images, a.warmup, reps)?.mean_ms),
                    None => None,
                };
                let row = MetricsRow {
                    model: name.clone(),
                    miou,
                    mdsc,
                    latency_ms,
                    patch: PATCH,
                };
                println!("{row:.d$}", d = a.digits);
            }
        }
        Command::EnsembleSearch(a) => {
            let ds = PatchDataset::load(&a.input)?;
            let samples = nonempty(ds.split(a.split), a.split)?;
            let (models, _) = load_models(&Models {
                models: a.models.clone(),
                ensemble: None,
            })?;
            let (spec, table) = search(&models, &samples, a.grid, a.threshold)?;
            fs::write(&a.out, spec.to_toml()?)?;
            let names: Vec<&str> = models.keys().map(String::as_str).collect();
            println!("{}\tmIoU\tmDSC", names.join("\t"));
            for g in &table {
                let w: Vec<String> = g.weights.iter().map(|w| format!("{w:.2}")).collect();
                println!("{}\t{:.6}\t{:.6}", w.join("\t"), g.miou, g.mdsc);
            }
        }
        Command::Bench(a) => {
            let samples: Vec<PatchSample> = match (&a.input, a.seed) {
                (Some(dir), _) => PatchDataset::load(dir)?.samples,
                (None, Some(seed)) => phantom_to_patches(
                    &generate_phantom(&PhantomConfig {
                        seed,
                        ..PhantomConfig::default()
                    })?,
                    dseg::geometry::Plane::Xy,
                    PATCH,
                )?,
                (None, None) => return Err(Error::InvalidArgument("bench needs --in or --seed".into())),
            };
            let images: Vec<&[f32]> = samples.iter().take(BENCH_PATCHES).map(|s| &s.image[..]).collect();
            let (models, spec) = load_models(&a.models)?;
            println!("{BENCH_HEADER}");
            match spec {
                Some(spec) => {
                    let ens = Ensemble::new(models, spec)?;
                    let d = decompose_enet(&ens, &images, a.warmup, a.reps)?;
                    for c in &d.components {
                        println!("{c}");
                    }
                    println!("{}", d.enet);
                    println!(
                        "# combination_ms={:.3}\tpredicted_ms={:.3}\tmax_component_ms={:.3}\tratio={:.3}",
                        d.combination_ms,
                        d.predicted_ms(),
                        d.max_component_ms(),
                        d.ratio()
                    );
                }
                None => {
                    for (name, m) in &models {
                        println!("{}", bench_latency::<f32>(name, m, &images, a.warmup, a.reps)?);
                    }
                }
            }
        }
    }
    Ok(())
}

fn print_saved(header: &Path) {
    println!("{}", header.display());
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::InvalidArgument("--seed is required; no implicit seeding".into()))
}

fn nonempty(samples: Vec<&PatchSample>, tag: SplitTag) -> Result<Vec<&PatchSample>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset has no {} samples", tag.name())));
    }
    Ok(samples)
}

type Loaded = (BTreeMap<String, ModelGraph<f32>>, Option<EnsembleSpec>);

fn load_models(args: &Models) -> Result<Loaded> {
    let mut models = BTreeMap::new();
    for path in &args.models {
        let m = load_checkpoint::<f32>(path)?.model;
        let name = m.name().to_string();
        if models.insert(name.clone(), m).is_some() {
            return Err(Error::InvalidArgument(format!("two checkpoints are both {name}")));
        }
    }
    let spec = match &args.ensemble {
        Some(p) => Some(EnsembleSpec::from_toml(&fs::read_to_string(p)?)?),
        None => None,
    };
    Ok((models, spec))
}

fn load_target(args: &Models) -> Result<(Box<dyn Segmenter>, Option<EnsembleSpec>)> {
    let (mut models, spec) = load_models(args)?;
    match spec {
        Some(spec) => Ok((Box::new(Ensemble::new(models, spec.clone())?), Some(spec))),
        None if models.len() == 1 => Ok((Box::new(models.pop_first().expect("one model").1), None)),
        None => Err(Error::InvalidArgument("several checkpoints need --ensemble".into())),
    }
}

/// Per-patch mIoU and mDSC of thresholded probabilities.
fn score(target: &dyn Segmenter, samples: &[&PatchSample], threshold: f64) -> Result<(f64, f64)> {
    let (mut iou_sum, mut dsc_sum) = (0.0, 0.0);
    for chunk in samples.chunks(INFER_BATCH) {
        let inputs: Vec<&[f32]> = chunk.iter().map(|s| &s.image[..]).collect();
        let probs = target.probabilities(&inputs)?;
        for (s, p) in chunk.iter().zip(probs.chunks(PATCH * PATCH)) {
            let pred: Vec<u8> = p.iter().map(|&v| u8::from(v as f64 > threshold)).collect();
            let c = confusion(&s.mask, &pred)?;
            iou_sum += iou(c);
            dsc_sum += dsc(c);
        }
    }
    let n = samples.len() as f64;
    Ok((iou_sum / n, dsc_sum / n))
}

/// Weight search over the models' probability maps on `samples`.
fn search(
    models: &BTreeMap<String, ModelGraph<f32>>,
    samples: &[&PatchSample],
    grid: f64,
    threshold: f64,
) -> Result<(EnsembleSpec, Vec<GridScore>)> {
    let n = samples.len();
    let mut maps = BTreeMap::new();
    for (name, m) in models {
        let probs = predict_samples(m, samples, INFER_BATCH)?;
        maps.insert(name.clone(), Tensor::new([n, 1, PATCH, PATCH], probs)?);
    }
    let truths = Masks::new(
        n,
        PATCH,
        PATCH,
        samples.iter().flat_map(|s| s.mask.iter().copied()).collect(),
    )?;
    ensemble_weight_search(&maps, &truths, grid, threshold)
}
