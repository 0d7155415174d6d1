use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Fixed sinusoidal table added to token embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    pub num_tokens: usize,
    pub embed_dim: usize,
    pub table: Tensor<f64>,
}

/// `table[p, 2i] = sin(p / 10000^(2i/D))`, `table[p, 2i+1] = cos(...)`.
pub fn fourier_positional_encoding(num_tokens: usize, embed_dim: usize) -> Result<PositionalEncoding> {
    if embed_dim == 0 || !embed_dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "embed_dim must be even and positive, got {embed_dim}"
        )));
    }
    let mut table = Vec::with_capacity(num_tokens * embed_dim);
    for p in 0..num_tokens {
        for i in 0..embed_dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / embed_dim as f64);
            table.push(angle.sin());
            table.push(angle.cos());
        }
    }
    Ok(PositionalEncoding {
        num_tokens,
        embed_dim,
        table: Tensor::new([num_tokens, embed_dim], table)?,
    })
}

/// Square image split into non-overlapping square sub-patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchEmbedSpec {
    pub image: usize,
    pub patch: usize,
    pub embed_dim: usize,
}

impl Default for PatchEmbedSpec {
    fn default() -> Self {
        Self {
            image: 128,
            patch: 16,
            embed_dim: 64,
        }
    }
}

impl PatchEmbedSpec {
    pub fn grid(&self) -> usize {
        self.image / self.patch
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch
    }
}

/// `[N, 1, S, S]` → `[N, T, p²]`, tokens in row-major grid order.
pub fn patch_tokens<T: Scalar>(tape: &mut Tape<T>, x: Var, spec: &PatchEmbedSpec) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let s = spec.image;
    if spec.patch == 0
        || !s.is_multiple_of(spec.patch)
        || shape.len() != 4
        || shape[1] != 1
        || shape[2] != s
        || shape[3] != s
    {
        return Err(Error::shape(
            "patch_embed",
            format!("expected [N, 1, {s}, {s}] divisible by {}, got {shape:?}", spec.patch),
        ));
    }
    let (n, g, p) = (shape[0], spec.grid(), spec.patch);
    let x = tape.reshape(x, &[n, g, p, g, p])?;
    let x = tape.permute(x, &[0, 1, 3, 2, 4])?;
    tape.reshape(x, &[n, g * g, p * p])
}

/// Linear projection of each sub-patch plus positional encoding.
pub fn patch_embed<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    spec: &PatchEmbedSpec,
    proj: Var,
    bias: Var,
    pe: &PositionalEncoding,
) -> Result<Var> {
    if pe.num_tokens != spec.num_tokens() || pe.embed_dim != spec.embed_dim {
        return Err(Error::invalid(format!(
            "positional encoding {}x{} does not match {} tokens of dim {}",
            pe.num_tokens,
            pe.embed_dim,
            spec.num_tokens(),
            spec.embed_dim
        )));
    }
    let tokens = patch_tokens(tape, x, spec)?;
    let e = tape.matmul(tokens, proj)?;
    let e = tape.add(e, bias)?;
    let table = tape.constant(pe.table.cast());
    tape.add(e, table)
}
