//! Parameterised layers: each owns [`ParamId`]s into a [`ParamStore`] and
//! runs on parameters bound to a tape.

use rand::Rng;

use super::attention::{multi_head_self_attention, AttentionSpec, AttentionWeights};
use super::conv::{Conv2dSpec, TransposedConv2dSpec};
use super::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: Conv2dSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    /// He-uniform weights and zero bias.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: Conv2dSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = (spec.in_channels * spec.kernel.0 * spec.kernel.1) as f64;
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&spec.weight_shape(), (6.0 / fan_in).sqrt(), rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([spec.out_channels]))?;
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.spec)
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(tape, p, x)?;
        tape.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct TransposedConv {
    pub spec: TransposedConv2dSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl TransposedConv {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: TransposedConv2dSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // Inputs contributing to one output pixel: in · kh · kw / stride².
        let fan_in = (spec.in_channels * spec.kernel.0 * spec.kernel.1) as f64 / (spec.stride * spec.stride) as f64;
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&spec.weight_shape(), (6.0 / fan_in.max(1.0)).sqrt(), rng),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([spec.out_channels]))?;
        Ok(Self { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.transposed_conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.spec)
    }
}

/// `y = x · W (+ b)` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[fan_in, fan_out], (3.0 / fan_in as f64).sqrt(), rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([fan_out]))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add(y, p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn init<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones([dim]))?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros([dim]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.shift))
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub spec: AttentionSpec,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl SelfAttention {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: AttentionSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = spec.embed_dim();
        let bound = (3.0 / d as f64).sqrt();
        let mut w = |suffix: &str| store.add(format!("{name}.{suffix}"), uniform(&[d, d], bound, rng));
        Ok(Self {
            spec,
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let w = AttentionWeights {
            wq: p.var(self.wq),
            wk: p.var(self.wk),
            wv: p.var(self.wv),
            wo: p.var(self.wo),
        };
        multi_head_self_attention(tape, x, &self.spec, &w)
    }
}
