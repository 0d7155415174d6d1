use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardCtx, PATCH};
use crate::nn::{
    fourier_positional_encoding, patch_embed, AttentionSpec, Bound, Conv, Conv2dSpec, LayerNorm, Linear, ParamStore,
    PatchEmbedSpec, PositionalEncoding, SelfAttention, TransposedConv, TransposedConv2dSpec,
};
use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TNetConfig {
    pub patch: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_units: usize,
    pub mlp_hidden: usize,
    /// A skip tap is taken after every `tap_every` encoder units.
    pub tap_every: usize,
    /// Width of the 3x3 conv stage on the token grid.
    pub bottleneck_channels: usize,
    /// Output width of each 2x upsampling stage, coarsest first.
    pub decoder: Vec<usize>,
}

impl Default for TNetConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            embed_dim: 64,
            num_heads: 4,
            num_units: 8,
            mlp_hidden: 256,
            tap_every: 2,
            bottleneck_channels: 128,
            decoder: vec![64, 32, 16, 8],
        }
    }
}

impl TNetConfig {
    pub fn embed_spec(&self) -> PatchEmbedSpec {
        PatchEmbedSpec {
            image: PATCH,
            patch: self.patch,
            embed_dim: self.embed_dim,
        }
    }

    pub fn num_taps(&self) -> usize {
        self.num_units / self.tap_every.max(1)
    }
}

#[derive(Clone, Debug)]
struct EncoderUnit {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderUnit {
    fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        ctx: &mut ForwardCtx,
        dropout: f64,
    ) -> Result<Var> {
        let h = self.norm1.forward(tape, p, x)?;
        let h = self.attn.forward(tape, p, h)?;
        let h = ctx.dropout(tape, h, dropout)?;
        let x = tape.add(x, h)?;
        let h = self.norm2.forward(tape, p, x)?;
        let h = self.fc1.forward(tape, p, h)?;
        let h = tape.relu(h)?;
        let h = self.fc2.forward(tape, p, h)?;
        let h = ctx.dropout(tape, h, dropout)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct TNet {
    cfg: TNetConfig,
    pe: PositionalEncoding,
    proj: Linear,
    units: Vec<EncoderUnit>,
    bottleneck: Conv,
    up: Vec<TransposedConv>,
    dec: Vec<Conv>,
    head: Conv,
}

impl TNet {
    pub(crate) fn build<T: Scalar>(cfg: &TNetConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let spec = cfg.embed_spec();
        if cfg.patch == 0 || !PATCH.is_multiple_of(cfg.patch) {
            return Err(Error::invalid(format!("patch {} does not tile {PATCH}", cfg.patch)));
        }
        let grid = spec.grid();
        let stages = (PATCH / grid).trailing_zeros() as usize;
        if !(PATCH / grid).is_power_of_two() || cfg.decoder.len() != stages {
            return Err(Error::invalid(format!(
                "T-Net decoder needs {stages} upsampling stages, got {}",
                cfg.decoder.len()
            )));
        }
        if cfg.tap_every == 0 || !cfg.num_units.is_multiple_of(cfg.tap_every) || cfg.num_taps() > stages {
            return Err(Error::invalid(format!(
                "{} units tapped every {} exceed {stages} decoder stages",
                cfg.num_units, cfg.tap_every
            )));
        }
        let d = cfg.embed_dim;
        let pe = fourier_positional_encoding(spec.num_tokens(), d)?;
        let proj = Linear::init(store, "embed", spec.patch_len(), d, true, rng)?;
        let attn_spec = AttentionSpec::new(d, cfg.num_heads)?;
        let mut units = Vec::new();
        for u in 0..cfg.num_units {
            let name = format!("unit{u}");
            units.push(EncoderUnit {
                norm1: LayerNorm::init(store, &format!("{name}.norm1"), d)?,
                attn: SelfAttention::init(store, &format!("{name}.attn"), attn_spec, rng)?,
                norm2: LayerNorm::init(store, &format!("{name}.norm2"), d)?,
                fc1: Linear::init(store, &format!("{name}.fc1"), d, cfg.mlp_hidden, true, rng)?,
                fc2: Linear::init(store, &format!("{name}.fc2"), cfg.mlp_hidden, d, true, rng)?,
            });
        }
        let bottleneck = Conv::init(
            store,
            "bottleneck",
            Conv2dSpec::same(d, cfg.bottleneck_channels, 3),
            rng,
        )?;
        let taps = cfg.num_taps();
        let mut prev = cfg.bottleneck_channels + if taps > 0 { d } else { 0 };
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for (s, &width) in cfg.decoder.iter().enumerate() {
            up.push(TransposedConv::init(
                store,
                &format!("up{s}"),
                TransposedConv2dSpec::upsample2(prev, width),
                rng,
            )?);
            // Stage s concatenates the tap that is s+1 steps shallower than the deepest one.
            let skip = if s + 1 < taps { d } else { 0 };
            dec.push(Conv::init(
                store,
                &format!("dec{s}"),
                Conv2dSpec::same(width + skip, width, 3),
                rng,
            )?);
            prev = width;
        }
        let head = Conv::init(store, "head", Conv2dSpec::new(prev, 1, 1), rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            pe,
            proj,
            units,
            bottleneck,
            up,
            dec,
            head,
        })
    }

    /// `[N, T, D]` tokens → `[N, D, g, g]` feature map.
    fn to_map<T: Scalar>(&self, tape: &mut Tape<T>, tokens: Var) -> Result<Var> {
        let n = tape.shape(tokens)[0];
        let g = self.cfg.embed_spec().grid();
        let t = tape.permute(tokens, &[0, 2, 1])?;
        tape.reshape(t, &[n, self.cfg.embed_dim, g, g])
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        ctx: &mut ForwardCtx,
        dropout: f64,
    ) -> Result<Var> {
        let spec = self.cfg.embed_spec();
        let bias = self.proj.bias.map(|b| p.var(b)).expect("embedding has a bias");
        let mut h = patch_embed(tape, x, &spec, p.var(self.proj.weight), bias, &self.pe)?;
        ctx.record("tokens", h);
        let mut taps = Vec::new();
        for (u, unit) in self.units.iter().enumerate() {
            h = unit.forward(tape, p, h, ctx, dropout)?;
            if (u + 1) % self.cfg.tap_every == 0 {
                let map = self.to_map(tape, h)?;
                ctx.record(format!("tap{}", u + 1), map);
                taps.push(map);
            }
        }
        let last = self.to_map(tape, h)?;
        let mut h = self.bottleneck.forward_relu(tape, p, last)?;
        ctx.record("bottleneck", h);
        // Deepest tap joins at the token grid, shallower ones progressively finer.
        let mut taps = taps.into_iter().rev();
        if let Some(t) = taps.next() {
            h = tape.concat(&[h, t], 1)?;
        }
        for (s, (up, dec)) in self.up.iter().zip(&self.dec).enumerate() {
            h = up.forward(tape, p, h)?;
            if let Some(t) = taps.next() {
                let t = tape.upsample_nearest(t, 1 << (s + 1))?;
                h = tape.concat(&[h, t], 1)?;
            }
            h = dec.forward_relu(tape, p, h)?;
        }
        self.head.forward(tape, p, h)
    }
}
