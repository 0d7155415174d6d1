use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

/// Multi-head self-attention geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    embed_dim: usize,
    num_heads: usize,
}

impl AttentionSpec {
    pub fn new(embed_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || embed_dim == 0 || !embed_dim.is_multiple_of(num_heads) {
            return Err(Error::invalid(format!(
                "embed_dim {embed_dim} is not divisible by num_heads {num_heads}"
            )));
        }
        Ok(Self { embed_dim, num_heads })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Projection matrices `[D, D]`, applied as `x · W`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// `[N, T, D]` → `[N·H, T, dh]` head-major layout; with `transpose`
/// the last two axes are swapped.
fn split_heads<T: Scalar>(tape: &mut Tape<T>, x: Var, h: usize, transpose: bool) -> Result<Var> {
    let (n, t, d) = match *tape.shape(x) {
        [n, t, d] => (n, t, d),
        ref s => return Err(Error::shape("attention", format!("expected [N, T, D], got {s:?}"))),
    };
    let dh = d / h;
    let x = tape.reshape(x, &[n, t, h, dh])?;
    if transpose {
        let x = tape.permute(x, &[0, 2, 3, 1])?;
        tape.reshape(x, &[n * h, dh, t])
    } else {
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[n * h, t, dh])
    }
}

/// Scaled dot-product self-attention over all tokens of each sample.
pub fn multi_head_self_attention<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    spec: &AttentionSpec,
    w: &AttentionWeights,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [n, t, d] = shape[..] else {
        return Err(Error::shape("attention", format!("expected [N, T, D], got {shape:?}")));
    };
    if d != spec.embed_dim {
        return Err(Error::ShapeMismatch {
            op: "attention embed_dim",
            lhs: vec![spec.embed_dim],
            rhs: vec![d],
        });
    }
    let h = spec.num_heads;
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(x, w.wk)?;
    let v = tape.matmul(x, w.wv)?;
    let q = split_heads(tape, q, h, false)?;
    let kt = split_heads(tape, k, h, true)?;
    let v = split_heads(tape, v, h, false)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, T::lit(1.0 / (spec.head_dim() as f64).sqrt()))?;
    let attn = tape.softmax(scores)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.reshape(ctx, &[n, h, t, spec.head_dim()])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, t, d])?;
    tape.matmul(ctx, w.wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn indivisible_heads_rejected() {
        assert!(AttentionSpec::new(64, 3).is_err());
        assert_eq!(AttentionSpec::new(64, 4).unwrap().head_dim(), 16);
    }

    #[test]
    fn single_token_collapses_to_value_path() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 2], &[1.0, 2.0]).unwrap());
        let eye = Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let wq = tape.constant(Tensor::from_f64([2, 2], &[5.0, -1.0, 3.0, 2.0]).unwrap());
        let wk = tape.constant(Tensor::from_f64([2, 2], &[0.5, 7.0, 1.0, 1.0]).unwrap());
        let wv = tape.constant(Tensor::from_f64([2, 2], &[2.0, 0.0, 0.0, 3.0]).unwrap());
        let wo = tape.constant(eye);
        let spec = AttentionSpec::new(2, 1).unwrap();
        let y = multi_head_self_attention(&mut tape, x, &spec, &AttentionWeights { wq, wk, wv, wo }).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 6.0]);
    }
}
