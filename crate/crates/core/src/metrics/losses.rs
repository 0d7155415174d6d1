use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tape, Var};
use crate::{Error, Result};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before any log or ratio.
pub const CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    BalancedBce,
    Tversky,
    FocalTversky,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::BalancedBce => "balanced_bce",
            Self::Tversky => "tversky",
            Self::FocalTversky => "focal_tversky",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Bce, Self::BalancedBce, Self::Tversky, Self::FocalTversky]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss {s}")))
    }
}

/// `beta` weighs false positives (Tversky) or the positive class (balanced
/// BCE); `gamma` is the focal exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub beta: f64,
    pub gamma: f64,
}

impl LossParams {
    pub const TVERSKY: Self = Self { beta: 0.7, gamma: 0.75 };
    pub const BALANCED: Self = Self { beta: 0.5, gamma: 0.75 };

    pub fn default_for(kind: LossKind) -> Self {
        match kind {
            LossKind::BalancedBce | LossKind::Bce => Self::BALANCED,
            LossKind::Tversky | LossKind::FocalTversky => Self::TVERSKY,
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")))
    }
}

fn prepare<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var) -> Result<Var> {
    if tape.shape(y) != tape.shape(yhat) {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: tape.shape(y).to_vec(),
            rhs: tape.shape(yhat).to_vec(),
        });
    }
    tape.clamp(yhat, T::lit(CLAMP), T::lit(1.0 - CLAMP))
}

/// Positive Tversky index `tp / (tp + β·fp + (1−β)·fn)` over the whole batch.
pub fn tversky_index<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var, beta: f64) -> Result<Var> {
    check_beta(beta)?;
    let p = prepare(tape, y, yhat)?;
    let inv_y = tape.rsub_scalar(T::one(), y)?;
    let inv_p = tape.rsub_scalar(T::one(), p)?;
    let tp = tape.mul(y, p)?;
    let tp = tape.sum(tp)?;
    let fp = tape.mul(inv_y, p)?;
    let fp = tape.sum(fp)?;
    let fn_ = tape.mul(y, inv_p)?;
    let fn_ = tape.sum(fn_)?;
    let fp = tape.scale(fp, T::lit(beta))?;
    let fn_ = tape.scale(fn_, T::lit(1.0 - beta))?;
    let denom = tape.add(tp, fp)?;
    let denom = tape.add(denom, fn_)?;
    tape.div(tp, denom)
}

pub fn tversky_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var, beta: f64) -> Result<Var> {
    let ti = tversky_index(tape, y, yhat, beta)?;
    tape.neg(ti)
}

/// `(1 − TI)^γ`.
pub fn focal_tversky_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var, beta: f64, gamma: f64) -> Result<Var> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let ti = tversky_index(tape, y, yhat, beta)?;
    let one_minus = tape.rsub_scalar(T::one(), ti)?;
    tape.powf(one_minus, T::lit(gamma))
}

fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var, pos: f64, neg: f64) -> Result<Var> {
    let p = prepare(tape, y, yhat)?;
    let log_p = tape.log(p)?;
    let inv_p = tape.rsub_scalar(T::one(), p)?;
    let log_q = tape.log(inv_p)?;
    let inv_y = tape.rsub_scalar(T::one(), y)?;
    let a = tape.mul(y, log_p)?;
    let a = tape.scale(a, T::lit(pos))?;
    let b = tape.mul(inv_y, log_q)?;
    let b = tape.scale(b, T::lit(neg))?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.neg(m)
}

/// Mean binary cross-entropy.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var) -> Result<Var> {
    cross_entropy(tape, y, yhat, 1.0, 1.0)
}

/// Cross-entropy with the positive term weighted by `β` and the negative by `1 − β`.
pub fn balanced_bce_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, yhat: Var, beta: f64) -> Result<Var> {
    check_beta(beta)?;
    cross_entropy(tape, y, yhat, beta, 1.0 - beta)
}

pub fn loss<T: Scalar>(tape: &mut Tape<T>, kind: LossKind, params: LossParams, y: Var, yhat: Var) -> Result<Var> {
    match kind {
        LossKind::Bce => bce_loss(tape, y, yhat),
        LossKind::BalancedBce => balanced_bce_loss(tape, y, yhat, params.beta),
        LossKind::Tversky => tversky_loss(tape, y, yhat, params.beta),
        LossKind::FocalTversky => focal_tversky_loss(tape, y, yhat, params.beta, params.gamma),
    }
}
