//! Per-patch latency measurement.
//!
//! Protocol: one `128 × 128` patch per forward call on the calling thread,
//! `warmup` untimed calls, then `reps` timed calls cycling through the
//! supplied patches. Reported latency is the mean wall-clock time per call.

use std::fmt;
use std::time::Instant;

use crate::arch::PATCH;
use crate::engine::{Ensemble, Segmenter};
use crate::metrics::MetricsRow;
use crate::tensor::Scalar;
use crate::{Error, Result};

pub const MIN_WARMUP: usize = 5;
pub const MIN_REPS: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub model: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
    pub miou: Option<f64>,
    pub mdsc: Option<f64>,
    pub threads: usize,
    pub precision: &'static str,
}

impl BenchResult {
    pub fn row(&self) -> MetricsRow {
        MetricsRow {
            model: self.model.clone(),
            miou: self.miou.unwrap_or(f64::NAN),
            mdsc: self.mdsc.unwrap_or(f64::NAN),
            latency_ms: Some(self.mean_ms),
            patch: PATCH,
        }
    }
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.3}\t{:.3}\t{}\tthreads={}\tprecision={}",
            self.model, self.mean_ms, self.std_ms, self.samples, self.threads, self.precision
        )
    }
}

fn check_counts(patches: usize, warmup: usize, reps: usize) -> Result<()> {
    if warmup < MIN_WARMUP || reps < MIN_REPS {
        return Err(Error::invalid(format!(
            "latency needs at least {MIN_WARMUP} warmup and {MIN_REPS} timed runs, got {warmup} and {reps}"
        )));
    }
    if patches == 0 {
        return Err(Error::invalid("latency needs at least one patch"));
    }
    Ok(())
}

/// Mean and sample standard deviation in milliseconds of `f` over `reps`
/// calls after `warmup` untimed ones.
pub fn time_calls(
    patches: &[&[f32]],
    warmup: usize,
    reps: usize,
    mut f: impl FnMut(&[f32]) -> Result<()>,
) -> Result<(f64, f64)> {
    check_counts(patches.len(), warmup, reps)?;
    for i in 0..warmup {
        f(patches[i % patches.len()])?;
    }
    let mut times = Vec::with_capacity(reps);
    for i in 0..reps {
        let p = patches[i % patches.len()];
        let t = Instant::now();
        f(p)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Single-patch forward latency of a model or ensemble.
pub fn bench_latency<T: Scalar>(
    name: &str,
    target: &dyn Segmenter,
    patches: &[&[f32]],
    warmup: usize,
    reps: usize,
) -> Result<BenchResult> {
    let (mean_ms, std_ms) = time_calls(patches, warmup, reps, |p| target.probabilities(&[p]).map(|_| ()))?;
    Ok(BenchResult {
        model: name.to_string(),
        mean_ms,
        std_ms,
        samples: reps,
        miou: None,
        mdsc: None,
        threads: 1,
        precision: precision_name::<T>(),
    })
}

pub fn precision_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

/// Ensemble latency next to its parts: each component alone and the
/// combination step alone.
#[derive(Clone, Debug)]
pub struct EnetDecomposition {
    pub enet: BenchResult,
    pub components: Vec<BenchResult>,
    pub combination_ms: f64,
}

impl EnetDecomposition {
    /// Sum of component latencies plus the combination step.
    pub fn predicted_ms(&self) -> f64 {
        self.components.iter().map(|c| c.mean_ms).sum::<f64>() + self.combination_ms
    }

    pub fn max_component_ms(&self) -> f64 {
        self.components.iter().map(|c| c.mean_ms).fold(0.0, f64::max)
    }

    /// Measured over predicted ensemble latency.
    pub fn ratio(&self) -> f64 {
        self.enet.mean_ms / self.predicted_ms()
    }
}

pub fn decompose_enet<T: Scalar>(
    ensemble: &Ensemble<T>,
    patches: &[&[f32]],
    warmup: usize,
    reps: usize,
) -> Result<EnetDecomposition> {
    let mut components = Vec::new();
    for name in ensemble.spec.weights.keys() {
        components.push(bench_latency::<T>(name, &ensemble.models[name], patches, warmup, reps)?);
    }
    let maps: Vec<_> = patches
        .iter()
        .map(|p| {
            let x = crate::Tensor::new([1, 1, PATCH, PATCH], p.iter().map(|&v| T::lit(v as f64)).collect())?;
            ensemble.component_maps(&x)
        })
        .collect::<Result<_>>()?;
    let mut k = 0;
    let (combination_ms, _) = time_calls(patches, warmup, reps, |_| {
        let m = &maps[k % maps.len()];
        k += 1;
        crate::arch::enet_predict(m, &ensemble.spec).map(|_| ())
    })?;
    let enet = bench_latency::<T>("enet", ensemble, patches, warmup, reps)?;
    Ok(EnetDecomposition {
        enet,
        components,
        combination_ms,
    })
}
