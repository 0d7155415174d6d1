use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForwardCtx;
use crate::nn::{pyramid_pool, Bound, Conv, Conv2dSpec, ParamStore, TransposedConv, TransposedConv2dSpec};
use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct YNetConfig {
    /// Regular-branch channels per level, finest first; the last level is
    /// pooled once more before fusion.
    pub regular: Vec<usize>,
    pub dilated_channels: usize,
    pub dilation: usize,
    /// Stride-2 dilated convolutions between the input and the fusion grid.
    pub dilated_stages: usize,
    pub pyramid_bins: Vec<usize>,
    pub fuse_channels: usize,
}

impl Default for YNetConfig {
    fn default() -> Self {
        Self {
            regular: vec![24, 48, 96, 192],
            dilated_channels: 16,
            dilation: 2,
            dilated_stages: 4,
            pyramid_bins: vec![1, 2, 4],
            fuse_channels: 192,
        }
    }
}

impl YNetConfig {
    pub fn dilated_spec(&self, in_channels: usize) -> Conv2dSpec {
        Conv2dSpec::new(in_channels, self.dilated_channels, 3)
            .with_dilation(self.dilation)
            .with_stride(2)
            .with_padding(self.dilation)
    }
}

#[derive(Clone, Debug)]
pub struct YNet {
    regular: Vec<Conv>,
    dilated: Vec<Conv>,
    pyramid: Vec<Conv>,
    bins: Vec<usize>,
    fuse: Conv,
    up: Vec<TransposedConv>,
    dec: Vec<Conv>,
    head: Conv,
}

impl YNet {
    pub(crate) fn build<T: Scalar>(cfg: &YNetConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let r = &cfg.regular;
        let levels = r.len();
        if levels == 0 || levels != cfg.dilated_stages || r.iter().any(|&c| c < 2) || cfg.dilated_channels == 0 {
            return Err(Error::invalid(format!(
                "Y-Net needs one dilated stage per regular level, got {levels} levels and {} stages",
                cfg.dilated_stages
            )));
        }
        let mut regular = Vec::new();
        let mut prev = 1;
        for (i, &ch) in r.iter().enumerate() {
            regular.push(Conv::init(
                store,
                &format!("reg{i}"),
                Conv2dSpec::same(prev, ch, 3),
                rng,
            )?);
            prev = ch;
        }
        let mut dilated = Vec::new();
        let mut prev = 1;
        for i in 0..cfg.dilated_stages {
            dilated.push(Conv::init(store, &format!("dil{i}"), cfg.dilated_spec(prev), rng)?);
            prev = cfg.dilated_channels;
        }
        let d = cfg.dilated_channels;
        let pyramid = cfg
            .pyramid_bins
            .iter()
            .map(|b| Conv::init(store, &format!("ppm{b}"), Conv2dSpec::new(d, d, 1), rng))
            .collect::<Result<Vec<_>>>()?;
        let context = d * (1 + cfg.pyramid_bins.len());
        let fuse = Conv::init(
            store,
            "fuse",
            Conv2dSpec::same(r[levels - 1] + context, cfg.fuse_channels, 3),
            rng,
        )?;
        let mut up = Vec::new();
        let mut dec = Vec::new();
        let mut prev = cfg.fuse_channels;
        for i in (0..levels).rev() {
            let width = r[i] / 2;
            up.push(TransposedConv::init(
                store,
                &format!("up{i}"),
                TransposedConv2dSpec::upsample2(prev, width),
                rng,
            )?);
            dec.push(Conv::init(
                store,
                &format!("dec{i}"),
                Conv2dSpec::same(width + r[i], width, 3),
                rng,
            )?);
            prev = width;
        }
        let head = Conv::init(store, "head", Conv2dSpec::new(prev, 1, 1), rng)?;
        Ok(Self {
            regular,
            dilated,
            pyramid,
            bins: cfg.pyramid_bins.clone(),
            fuse,
            up,
            dec,
            head,
        })
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
        for conv in &self.regular {
            h = conv.forward_relu(tape, p, h)?;
            skips.push(h);
            h = tape.max_pool2d(h, 2)?;
        }
        ctx.record("regular_terminal", h);

        let mut d = x;
        for conv in &self.dilated {
            d = conv.forward_relu(tape, p, d)?;
        }
        ctx.record("dilated_terminal", d);
        let convs: Vec<(Var, Var)> = self.pyramid.iter().map(|c| (p.var(c.weight), p.var(c.bias))).collect();
        let ppm = pyramid_pool(tape, d, &self.bins, &convs)?;
        ctx.record("pyramid", ppm);

        let fused = tape.concat(&[h, d, ppm], 1)?;
        let mut h = self.fuse.forward_relu(tape, p, fused)?;
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
