use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForwardCtx;
use crate::nn::{Bound, Conv, Conv2dSpec, ParamStore, TransposedConv, TransposedConv2dSpec};
use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Encoder channels per resolution level, finest first.
    pub channels: Vec<usize>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64, 128, 256],
        }
    }
}

impl UNetConfig {
    /// Parameter count of the network this config builds.
    pub fn parameter_count(&self) -> usize {
        let c = &self.channels;
        let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
        let mut total = conv(1, c[0], 3);
        for w in c.windows(2) {
            total += conv(w[0], w[1], 3);
            // Decoder: 2x2 up-convolution, then a 3x3 conv on the concatenation.
            total += w[1] * w[0] * 4 + w[0];
            total += conv(2 * w[0], w[0], 3);
        }
        total + conv(c[0], 1, 1)
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    enc: Vec<Conv>,
    up: Vec<TransposedConv>,
    dec: Vec<Conv>,
    head: Conv,
}

impl UNet {
    pub(crate) fn build<T: Scalar>(cfg: &UNetConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let c = &cfg.channels;
        if c.len() < 2 || c.contains(&0) || !super::PATCH.is_multiple_of(1 << (c.len() - 1)) {
            return Err(Error::invalid(format!("unusable U-Net channel ladder {c:?}")));
        }
        let mut enc = Vec::new();
        let mut prev = 1;
        for (i, &ch) in c.iter().enumerate() {
            enc.push(Conv::init(
                store,
                &format!("enc{i}"),
                Conv2dSpec::same(prev, ch, 3),
                rng,
            )?);
            prev = ch;
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for i in (0..c.len() - 1).rev() {
            up.push(TransposedConv::init(
                store,
                &format!("up{i}"),
                TransposedConv2dSpec::upsample2(c[i + 1], c[i]),
                rng,
            )?);
            dec.push(Conv::init(
                store,
                &format!("dec{i}"),
                Conv2dSpec::same(2 * c[i], c[i], 3),
                rng,
            )?);
        }
        let head = Conv::init(store, "head", Conv2dSpec::new(c[0], 1, 1), rng)?;
        Ok(Self { enc, up, dec, head })
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        ctx: &mut ForwardCtx,
        dropout: f64,
    ) -> Result<Var> {
        let mut skips = Vec::new();
        let mut h = x;
        for (i, conv) in self.enc.iter().enumerate() {
            if i > 0 {
                h = tape.max_pool2d(h, 2)?;
            }
            h = conv.forward_relu(tape, p, h)?;
            skips.push(h);
        }
        skips.pop();
        ctx.record("bottleneck", h);
        h = ctx.dropout(tape, h, dropout)?;
        for ((up, dec), skip) in self.up.iter().zip(&self.dec).zip(skips.iter().rev()) {
            let u = up.forward(tape, p, h)?;
            let cat = tape.concat(&[u, *skip], 1)?;
            h = dec.forward_relu(tape, p, cat)?;
        }
        self.head.forward(tape, p, h)
    }
}
