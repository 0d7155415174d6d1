//! Differentiable building blocks: convolutions, pooling, attention,
//! normalisation, patch embedding and the parameter store they draw from.

mod attention;
mod conv;
mod embed;
mod layers;
mod norm;
mod params;
mod pool;
mod pyramid;

pub use attention::{multi_head_self_attention, AttentionSpec, AttentionWeights};
pub use conv::{Conv2dSpec, TransposedConv2dSpec};
pub use embed::{fourier_positional_encoding, patch_embed, patch_tokens, PatchEmbedSpec, PositionalEncoding};
pub use layers::{Conv, LayerNorm, Linear, SelfAttention, TransposedConv};
pub use norm::LAYER_NORM_EPS;
pub use params::{uniform, Bound, ParamId, ParamStore};
pub use pyramid::pyramid_pool;
