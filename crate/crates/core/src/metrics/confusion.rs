use crate::tensor::Scalar;
use crate::{Error, Result};

/// A batch of binary `H×W` masks stored contiguously as `0`/`1` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masks {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl Masks {
    pub fn new(count: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != count * height * width {
            return Err(Error::shape(
                "masks",
                format!("{} bytes for {count}x{height}x{width}", data.len()),
            ));
        }
        check_binary(&data)?;
        Ok(Self {
            count,
            height,
            width,
            data,
        })
    }

    /// Foreground iff `p > threshold`.
    pub fn from_probs<T: Scalar>(
        probs: &[T],
        count: usize,
        height: usize,
        width: usize,
        threshold: f64,
    ) -> Result<Self> {
        let data = probs.iter().map(|p| u8::from(p.as_f64() > threshold)).collect();
        Self::new(count, height, width, data)
    }

    pub fn patch_len(&self) -> usize {
        self.height * self.width
    }

    pub fn patch(&self, i: usize) -> &[u8] {
        &self.data[i * self.patch_len()..(i + 1) * self.patch_len()]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }
}

pub(crate) fn check_binary(data: &[u8]) -> Result<()> {
    match data.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::Domain {
            op: "binary mask",
            detail: format!("value {} at index {i} is not 0 or 1", data[i]),
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Pixel tallies of a predicted mask against the truth.
pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionCounts> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![truth.len()],
            rhs: vec![pred.len()],
        });
    }
    check_binary(truth)?;
    check_binary(pred)?;
    // Index 2·truth + pred selects tn, fp, fn, tp.
    let mut bins = [0u64; 4];
    for (&t, &p) in truth.iter().zip(pred) {
        bins[(2 * t + p) as usize] += 1;
    }
    Ok(ConfusionCounts {
        tn: bins[0],
        fp: bins[1],
        fn_: bins[2],
        tp: bins[3],
    })
}

/// Jaccard index; `1` when both masks are empty.
pub fn iou(c: ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        c.tp as f64 / denom as f64
    }
}

/// Dice coefficient; `1` when both masks are empty.
pub fn dsc(c: ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// Per-sample IoU and DSC averaged over samples: `(mIoU, mDSC)`.
pub fn mean_metrics<'a>(samples: impl IntoIterator<Item = (&'a [u8], &'a [u8])>) -> Result<(f64, f64)> {
    let mut ious = Vec::new();
    let mut dscs = Vec::new();
    for (t, p) in samples {
        let c = confusion(t, p)?;
        ious.push(iou(c));
        dscs.push(dsc(c));
    }
    if ious.is_empty() {
        return Err(Error::invalid("mean_metrics needs at least one sample"));
    }
    let n = ious.len() as f64;
    Ok((
        crate::tensor::pairwise_sum(&ious) / n,
        crate::tensor::pairwise_sum(&dscs) / n,
    ))
}

/// [`mean_metrics`] over matching patches of two mask batches.
pub fn mean_metrics_masks(truth: &Masks, pred: &Masks) -> Result<(f64, f64)> {
    if (truth.count, truth.height, truth.width) != (pred.count, pred.height, pred.width) {
        return Err(Error::ShapeMismatch {
            op: "mean_metrics",
            lhs: vec![truth.count, truth.height, truth.width],
            rhs: vec![pred.count, pred.height, pred.width],
        });
    }
    mean_metrics((0..truth.count).map(|i| (truth.patch(i), pred.patch(i))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        let c = ConfusionCounts {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 0,
        };
        assert!((iou(c) - 0.6).abs() < 1e-15);
        assert!((dsc(c) - 0.75).abs() < 1e-15);
        assert_eq!(iou(ConfusionCounts::default()), 1.0);
        assert_eq!(dsc(ConfusionCounts::default()), 1.0);
    }

    #[test]
    fn confusion_cases() {
        let t = [1, 1, 0, 0, 1];
        assert_eq!(
            confusion(&t, &t).unwrap(),
            ConfusionCounts {
                tp: 3,
                fp: 0,
                fn_: 0,
                tn: 2
            }
        );
        let c = confusion(&t, &[0; 5]).unwrap();
        assert_eq!((c.fn_, c.tp, c.fp), (3, 0, 0));
        assert!(confusion(&[2], &[0]).is_err());
        assert_eq!(dsc(confusion(&[1, 0], &[0, 1]).unwrap()), 0.0);
    }

    #[test]
    fn means() {
        let perfect: &[u8] = &[1, 0];
        assert_eq!(mean_metrics([(perfect, perfect)]).unwrap(), (1.0, 1.0));
        let half_t: &[u8] = &[1, 1];
        let half_p: &[u8] = &[1, 0];
        let (m, _) = mean_metrics([(perfect, perfect), (half_t, half_p)]).unwrap();
        assert_eq!(m, 0.75);
        assert!(mean_metrics(std::iter::empty()).is_err());
    }
}
