use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{mean_metrics, Masks};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Convex weights over named models plus the binarisation threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub weights: BTreeMap<String, f64>,
    pub threshold: f64,
}

impl EnsembleSpec {
    pub fn new(weights: BTreeMap<String, f64>, threshold: f64) -> Result<Self> {
        let spec = Self { weights, threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn single(model: &str) -> Self {
        Self {
            weights: BTreeMap::from([(model.to_string(), 1.0)]),
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::invalid("ensemble has no models"));
        }
        if let Some((m, w)) = self.weights.iter().find(|(_, &w)| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("weight {w} for {m} is negative or not finite")));
        }
        let total: f64 = self.weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("ensemble weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn batch_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, 1, h, w] => Ok((n, h, w)),
        _ => Err(Error::shape(
            "ensemble",
            format!("expected [N, 1, H, W], got {shape:?}"),
        )),
    }
}

/// Weighted mean of probability maps in double precision.
fn combine<T: Scalar>(maps: &BTreeMap<String, Tensor<T>>, weights: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    if maps.len() != weights.len() || maps.keys().any(|k| !weights.contains_key(k)) {
        return Err(Error::invalid(format!(
            "ensemble weights cover {:?} but maps are {:?}",
            weights.keys().collect::<Vec<_>>(),
            maps.keys().collect::<Vec<_>>()
        )));
    }
    let mut iter = maps.values();
    let first = iter.next().ok_or_else(|| Error::invalid("no probability maps"))?;
    batch_dims(first.shape())?;
    if let Some(t) = iter.find(|t| t.shape() != first.shape()) {
        return Err(Error::ShapeMismatch {
            op: "ensemble",
            lhs: first.shape().to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    let mut acc = vec![0.0; first.numel()];
    for (name, map) in maps {
        let w = weights[name];
        for (a, &p) in acc.iter_mut().zip(map.data()) {
            *a += w * p.as_f64();
        }
    }
    Ok(acc)
}

/// Convex combination of per-model probabilities, foreground iff `> threshold`.
pub fn enet_predict<T: Scalar>(maps: &BTreeMap<String, Tensor<T>>, spec: &EnsembleSpec) -> Result<Masks> {
    spec.validate()?;
    let combined = combine(maps, &spec.weights)?;
    let first = maps.values().next().expect("checked nonempty");
    let (n, h, w) = batch_dims(first.shape())?;
    Masks::from_probs(&combined, n, h, w, spec.threshold)
}

/// mIoU of one candidate weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GridScore {
    pub weights: Vec<f64>,
    pub miou: f64,
    pub mdsc: f64,
}

/// All compositions of `total` into `parts` nonnegative integers, in
/// lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive search over the simplex grid with spacing `grid_step`.
///
/// Models are ordered by name; ties keep the lexicographically smallest
/// weight vector. Returns the best spec and the score of every grid point.
pub fn ensemble_weight_search<T: Scalar>(
    maps: &BTreeMap<String, Tensor<T>>,
    truths: &Masks,
    grid_step: f64,
    threshold: f64,
) -> Result<(EnsembleSpec, Vec<GridScore>)> {
    let steps = (1.0 / grid_step).round();
    if !(grid_step > 0.0) || steps < 1.0 || (steps * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {grid_step} does not divide 1")));
    }
    if maps.is_empty() {
        return Err(Error::invalid("weight search over zero models"));
    }
    let names: Vec<&String> = maps.keys().collect();
    let steps = steps as usize;
    let mut table: Vec<GridScore> = Vec::new();
    let mut best: Option<usize> = None;
    for comp in compositions(steps, names.len()) {
        let weights: Vec<f64> = comp.iter().map(|&c| c as f64 / steps as f64).collect();
        let wmap: BTreeMap<String, f64> = names.iter().zip(&weights).map(|(n, &w)| ((*n).clone(), w)).collect();
        let combined = combine(maps, &wmap)?;
        let first = maps.values().next().expect("nonempty");
        let (n, h, w) = batch_dims(first.shape())?;
        let pred = Masks::from_probs(&combined, n, h, w, threshold)?;
        if (pred.count, pred.height, pred.width) != (truths.count, truths.height, truths.width) {
            return Err(Error::ShapeMismatch {
                op: "ensemble truths",
                lhs: vec![truths.count, truths.height, truths.width],
                rhs: vec![n, h, w],
            });
        }
        let (miou, mdsc) = mean_metrics((0..n).map(|i| (truths.patch(i), pred.patch(i))))?;
        if best.is_none_or(|b| miou > table[b].miou) {
            best = Some(table.len());
        }
        table.push(GridScore { weights, miou, mdsc });
    }
    let best = &table[best.ok_or_else(|| Error::invalid("empty weight grid"))?];
    let weights = names
        .iter()
        .zip(&best.weights)
        .map(|(n, &w)| ((*n).clone(), w))
        .collect();
    Ok((EnsembleSpec::new(weights, threshold)?, table))
}
