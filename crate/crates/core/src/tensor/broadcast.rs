use super::{strides, Scalar};
use crate::{Error, Result};

/// Output shape of a binary elementwise op under the trailing-dimension rule.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_end(a, rank - 1 - i);
        let db = dim_from_end(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn dim_from_end(shape: &[usize], from_end: usize) -> usize {
    if from_end < shape.len() {
        shape[shape.len() - 1 - from_end]
    } else {
        1
    }
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// shape `src` broadcast to it.
pub(crate) fn broadcast_index_map(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut padded = vec![1; rank];
    padded[rank - src.len()..].copy_from_slice(src);
    let src_strides = strides(&padded);
    let eff: Vec<usize> = (0..rank)
        .map(|d| if padded[d] == 1 { 0 } else { src_strides[d] })
        .collect();
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..numel {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// How an operand of shape `src` is laid out inside `out_shape`.
pub(crate) enum Layout {
    Same,
    /// `src` repeats with period `src.numel()` (a suffix broadcast).
    Cycle(usize),
    General(Vec<usize>),
}

pub(crate) fn layout(src: &[usize], out_shape: &[usize]) -> Layout {
    if src == out_shape {
        return Layout::Same;
    }
    let n: usize = src.iter().product();
    let rank = out_shape.len();
    let lead = rank - src.len();
    // Suffix broadcast: leading ones stripped, remaining dims match the tail.
    let first_non_one = src.iter().position(|&d| d != 1).unwrap_or(src.len());
    if src[first_non_one..] == out_shape[lead + first_non_one..] {
        return Layout::Cycle(n.max(1));
    }
    Layout::General(broadcast_index_map(src, out_shape))
}

/// Sum a gradient of shape `out_shape` down to an operand of shape `src`.
pub(crate) fn reduce_to<T: Scalar>(grad: &[T], src: &[usize], out_shape: &[usize]) -> Vec<T> {
    let n: usize = src.iter().product();
    match layout(src, out_shape) {
        Layout::Same => grad.to_vec(),
        Layout::Cycle(p) => {
            let mut acc = vec![T::zero(); n];
            for chunk in grad.chunks(p) {
                for (a, &g) in acc.iter_mut().zip(chunk) {
                    *a += g;
                }
            }
            acc
        }
        Layout::General(map) => {
            let mut acc = vec![T::zero(); n];
            for (&g, &i) in grad.iter().zip(&map) {
                acc[i] += g;
            }
            acc
        }
    }
}
