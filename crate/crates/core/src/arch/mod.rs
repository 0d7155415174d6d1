//! Segmentation networks assembled from [`crate::nn`] blocks and the
//! probability-averaging ensemble.

mod ensemble;
mod tnet;
mod unet;
mod ynet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Bound, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub use ensemble::{enet_predict, ensemble_weight_search, EnsembleSpec, GridScore};
pub use tnet::{TNet, TNetConfig};
pub use unet::{UNet, UNetConfig};
pub use ynet::{YNet, YNetConfig};

/// Side length of the square input and output patches.
pub const PATCH: usize = 128;

/// Output probabilities are `HEAD_EPS + (1 − 2·HEAD_EPS)·sigmoid(z)`, which
/// keeps them strictly inside `(0, 1)` at single precision.
pub const HEAD_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Ynet,
    Tnet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Unet, ModelKind::Ynet, ModelKind::Tnet];

    pub fn name(self) -> &'static str {
        match self {
            Self::Unet => "unet",
            Self::Ynet => "ynet",
            Self::Tnet => "tnet",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model {s} (expected unet, ynet or tnet)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetConfig {
    Unet(UNetConfig),
    Ynet(YNetConfig),
    Tnet(TNetConfig),
}

/// Everything needed to rebuild a network: stored as TOML in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub seed: u64,
    pub dropout: f64,
    pub net: NetConfig,
}

impl ArchConfig {
    pub fn default_for(kind: ModelKind, seed: u64) -> Self {
        let net = match kind {
            ModelKind::Unet => NetConfig::Unet(UNetConfig::default()),
            ModelKind::Ynet => NetConfig::Ynet(YNetConfig::default()),
            ModelKind::Tnet => NetConfig::Tnet(TNetConfig::default()),
        };
        Self {
            seed,
            dropout: 0.1,
            net,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.net {
            NetConfig::Unet(_) => ModelKind::Unet,
            NetConfig::Ynet(_) => ModelKind::Ynet,
            NetConfig::Tnet(_) => ModelKind::Tnet,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Clone, Debug)]
pub enum Network {
    UNet(UNet),
    YNet(YNet),
    TNet(TNet),
}

/// Per-call forward state: dropout mode and randomness, plus named
/// intermediate activations recorded for inspection.
pub struct ForwardCtx {
    pub training: bool,
    rng: ChaCha8Rng,
    taps: Vec<(String, Var)>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self::new(false, 0)
    }

    pub fn train(seed: u64) -> Self {
        Self::new(true, seed)
    }

    fn new(training: bool, seed: u64) -> Self {
        Self {
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            taps: Vec::new(),
        }
    }

    pub fn dropout<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, rate: f64) -> Result<Var> {
        if !self.training {
            return Ok(x);
        }
        let seed = self.rng.random();
        tape.dropout(x, rate, true, seed)
    }

    pub fn record(&mut self, name: impl Into<String>, v: Var) {
        self.taps.push((name.into(), v));
    }

    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.taps.iter().map(|(n, _)| n.as_str())
    }
}

/// An architecture instance: configuration, parameters and layer wiring.
#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    pub config: ArchConfig,
    pub params: ParamStore<T>,
    pub net: Network,
}

/// Sigmoid head squeezed into `[HEAD_EPS, 1 − HEAD_EPS]`.
pub(crate) fn probability_head<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let s = tape.sigmoid(logits)?;
    let s = tape.scale(s, T::lit(1.0 - 2.0 * HEAD_EPS))?;
    tape.add_scalar(s, T::lit(HEAD_EPS))
}

pub(crate) fn check_input<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<()> {
    match *tape.shape(x) {
        [_, 1, h, w] if h == PATCH && w == PATCH => Ok(()),
        ref s => Err(Error::shape(
            "model input",
            format!("expected [N, 1, {PATCH}, {PATCH}], got {s:?}"),
        )),
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Build and initialise from `config.seed`.
    pub fn build(config: ArchConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0, 1), got {}",
                config.dropout
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let net = match &config.net {
            NetConfig::Unet(c) => Network::UNet(UNet::build(c, &mut params, &mut rng)?),
            NetConfig::Ynet(c) => Network::YNet(YNet::build(c, &mut params, &mut rng)?),
            NetConfig::Tnet(c) => Network::TNet(TNet::build(c, &mut params, &mut rng)?),
        };
        Ok(Self { config, params, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Probabilities `[N, 1, 128, 128]` for input `x: [N, 1, 128, 128]`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        check_input(tape, x)?;
        let rate = self.config.dropout;
        let logits = match &self.net {
            Network::UNet(n) => n.forward(tape, p, x, ctx, rate)?,
            Network::YNet(n) => n.forward(tape, p, x, ctx, rate)?,
            Network::TNet(n) => n.forward(tape, p, x, ctx, rate)?,
        };
        probability_head(tape, logits)
    }

    /// Inference-mode forward on a fresh tape.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &p, xv, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Inference-mode forward that also returns every recorded activation.
    pub fn trace(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<(String, Tensor<T>)>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let mut ctx = ForwardCtx::eval();
        let y = self.forward(&mut tape, &p, xv, &mut ctx)?;
        let taps = ctx
            .taps
            .iter()
            .map(|(n, v)| (n.clone(), tape.value(*v).clone()))
            .collect();
        Ok((tape.value(y).clone(), taps))
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            config: self.config.clone(),
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }
}

pub fn build_unet<T: Scalar>(seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(ArchConfig::default_for(ModelKind::Unet, seed))
}

pub fn build_ynet<T: Scalar>(seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(ArchConfig::default_for(ModelKind::Ynet, seed))
}

pub fn build_tnet<T: Scalar>(seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(ArchConfig::default_for(ModelKind::Tnet, seed))
}
