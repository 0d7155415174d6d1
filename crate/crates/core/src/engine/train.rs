use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use crate::arch::{ForwardCtx, ModelGraph, ModelKind};
use crate::data::{augment, batch_tensors, AugmentConfig, AugmentDraw, PatchSample};
use crate::metrics::{confusion, dsc, loss, mean_metrics, LossKind, LossParams};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss_params: LossParams,
    /// On-the-fly augmentation of training batches; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl TrainConfig {
    /// Full epoch budgets: 450 (U-Net), 130 (Y-Net), 300 (T-Net).
    pub fn full(model: ModelKind, seed: u64) -> Self {
        let epochs = match model {
            ModelKind::Unet => 450,
            ModelKind::Ynet => 130,
            ModelKind::Tnet => 300,
        };
        Self::desk(model, epochs, seed)
    }

    /// Adam at `1e-3`, batch 8, cross-entropy, no augmentation.
    pub fn desk(model: ModelKind, epochs: usize, seed: u64) -> Self {
        Self {
            model,
            loss: LossKind::Bce,
            epochs,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed,
            loss_params: LossParams::default_for(LossKind::Bce),
            augment: None,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        // Zero is allowed: a null update leaves the parameters untouched.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be nonnegative",
                self.learning_rate
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_dice: f64,
    pub val_dice: f64,
    /// Elapsed since training started; not persisted, so saved runs stay
    /// byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<EpochRow>,
}

pub const HISTORY_HEADER: &str = "epoch\ttrain_loss\tval_loss\ttrain_dice\tval_dice";

impl TrainHistory {
    /// Tab-separated export with a header line, without timings.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.epoch, r.train_loss, r.val_loss, r.train_dice, r.val_dice
            );
        }
        out
    }

    /// First row with the highest validation dice.
    pub fn best(&self) -> Option<&EpochRow> {
        self.rows.iter().fold(None, |b: Option<&EpochRow>, r| match b {
            Some(b) if b.val_dice >= r.val_dice => Some(b),
            _ => Some(r),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::invalid("history epochs are not strictly increasing"));
        }
        let finite = |r: &EpochRow| {
            [r.train_loss, r.val_loss, r.train_dice, r.val_dice, r.wall_seconds]
                .iter()
                .all(|v| v.is_finite())
        };
        if !self.rows.iter().all(finite) {
            return Err(Error::invalid("history holds non-finite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation dice.
    pub model: ModelGraph<T>,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xd6e8_feb8_6659_fd93).rotate_left(29)
}

/// Per-sample hard dice of a probability batch, summed.
fn dice_sum<T: Scalar>(probs: &[T], samples: &[&PatchSample], threshold: f64) -> Result<f64> {
    let mut total = 0.0;
    for (s, p) in samples.iter().zip(probs.chunks(s_len(samples))) {
        let pred: Vec<u8> = p.iter().map(|v| u8::from(v.as_f64() > threshold)).collect();
        total += dsc(confusion(&s.mask, &pred)?);
    }
    Ok(total)
}

fn s_len(samples: &[&PatchSample]) -> usize {
    samples.first().map_or(1, |s| s.size * s.size)
}

/// One optimizer update on a batch; returns the loss and the probabilities.
#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    opt: &mut Optimizer,
    batch: &[&PatchSample],
    kind: LossKind,
    params: LossParams,
    dropout_seed: u64,
    (epoch, index): (usize, usize),
) -> Result<(f64, Tensor<T>)> {
    let (x, y) = batch_tensors::<T>(batch)?;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let probs = model.forward(&mut tape, &bound, xv, &mut ForwardCtx::train(dropout_seed))?;
    let l = loss(&mut tape, kind, params, yv, probs)?;
    let value = tape.value(l).item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, batch: index });
    }
    let out = tape.value(probs).clone();
    let mut grads = tape.backward(l)?;
    let grads: Vec<Tensor<T>> = bound
        .vars()
        .iter()
        .map(|&v| grads.take(v).expect("parameters require grad"))
        .collect();
    opt.step(&mut model.params, &grads)?;
    Ok((value, out))
}

/// Eval-mode probabilities for `samples`, batch by batch, concatenated.
pub fn predict_samples<T: Scalar>(model: &ModelGraph<T>, samples: &[&PatchSample], batch: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(samples.iter().map(|s| s.size * s.size).sum());
    for chunk in samples.chunks(batch.max(1)) {
        let (x, _) = batch_tensors::<T>(chunk)?;
        out.extend_from_slice(model.predict(&x)?.data());
    }
    Ok(out)
}

/// Mean loss plus per-sample mIoU and mDSC of eval-mode predictions.
pub fn evaluate_samples<T: Scalar>(
    model: &ModelGraph<T>,
    samples: &[&PatchSample],
    kind: LossKind,
    params: LossParams,
    threshold: f64,
    batch: usize,
) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation needs at least one sample"));
    }
    let mut loss_sum = 0.0;
    let mut preds: Vec<Vec<u8>> = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let (x, y) = batch_tensors::<T>(chunk)?;
        let probs = model.predict(&x)?;
        let mut tape = Tape::new();
        let yv = tape.constant(y);
        let pv = tape.constant(probs.clone());
        let l = loss(&mut tape, kind, params, yv, pv)?;
        loss_sum += tape.value(l).item()?.as_f64() * chunk.len() as f64;
        for p in probs.data().chunks(s_len(chunk)) {
            preds.push(p.iter().map(|v| u8::from(v.as_f64() > threshold)).collect());
        }
    }
    let (miou, mdsc) = mean_metrics(samples.iter().zip(&preds).map(|(s, p)| (&s.mask[..], &p[..])))?;
    Ok((loss_sum / samples.len() as f64, miou, mdsc))
}

/// Mini-batch training with per-epoch validation.
///
/// Batches are drawn from a seeded shuffle per epoch; the returned model
/// carries the parameters of the best validation-dice epoch.
pub fn train<T: Scalar>(
    model: &ModelGraph<T>,
    train_set: &[PatchSample],
    val_set: &[PatchSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training needs nonempty train and validation splits"));
    }
    if cfg.model != model.kind() {
        return Err(Error::invalid(format!(
            "config trains {} but the model is {}",
            cfg.model.name(),
            model.name()
        )));
    }
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.params)?;
    let val: Vec<&PatchSample> = val_set.iter().collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, crate::nn::ParamStore<T>)> = None;
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0)));
        let (mut loss_sum, mut dice_total) = (0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<PatchSample>;
            let batch: Vec<&PatchSample> = match &cfg.augment {
                Some(a) => {
                    augmented = idx
                        .iter()
                        .map(|&i| augment(&train_set[i], &AugmentDraw::for_sample(a, i as u64, epoch as u64)))
                        .collect();
                    augmented.iter().collect()
                }
                None => idx.iter().map(|&i| &train_set[i]).collect(),
            };
            let seed = mix(cfg.seed, epoch as u64, b as u64 + 1);
            let (l, probs) = train_step(
                &mut model,
                &mut opt,
                &batch,
                cfg.loss,
                cfg.loss_params,
                seed,
                (epoch, b),
            )?;
            loss_sum += l * batch.len() as f64;
            dice_total += dice_sum(probs.data(), &batch, cfg.threshold)?;
        }
        let n = train_set.len() as f64;
        let (val_loss, _, val_dice) =
            evaluate_samples(&model, &val, cfg.loss, cfg.loss_params, cfg.threshold, cfg.batch_size)?;
        let row = EpochRow {
            epoch,
            train_loss: loss_sum / n,
            val_loss,
            train_dice: dice_total / n,
            val_dice,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        if best.as_ref().is_none_or(|(d, _, _)| val_dice > *d) {
            best = Some((val_dice, epoch, model.params.clone()));
        }
        on_epoch(&row);
        history.rows.push(row);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverfitReport {
    /// Optimizer steps taken.
    pub steps: usize,
    /// Eval-mode mean per-sample dice after the last step.
    pub dice: f64,
    pub reached: bool,
    /// `(step, dice)` at every check.
    pub curve: Vec<(usize, f64)>,
}

/// Full-batch Adam on a fixed sample set until the eval-mode dice reaches
/// `target` (checked every `check_every` steps) or `max_steps` run out.
pub fn overfit<T: Scalar>(
    model: &mut ModelGraph<T>,
    samples: &[PatchSample],
    kind: LossKind,
    lr: f64,
    seed: u64,
    (target, max_steps, check_every): (f64, usize, usize),
) -> Result<OverfitReport> {
    if samples.is_empty() {
        return Err(Error::invalid("overfit needs samples"));
    }
    let batch: Vec<&PatchSample> = samples.iter().collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, lr, &model.params)?;
    let params = LossParams::default_for(kind);
    let mut curve = Vec::new();
    let mut dice = 0.0;
    for step in 1..=max_steps {
        train_step(
            model,
            &mut opt,
            &batch,
            kind,
            params,
            mix(seed, step as u64, 0),
            (1, step - 1),
        )?;
        if step % check_every.max(1) == 0 || step == max_steps {
            let probs = predict_samples(model, &batch, batch.len())?;
            dice = dice_sum(&probs, &batch, 0.5)? / batch.len() as f64;
            curve.push((step, dice));
            if dice >= target {
                return Ok(OverfitReport {
                    steps: step,
                    dice,
                    reached: true,
                    curve,
                });
            }
        }
    }
    Ok(OverfitReport {
        steps: max_steps,
        dice,
        reached: false,
        curve,
    })
}
