use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" => Ok(Self::SgdMomentum),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_MOMENTUM: f64 = 0.9;

/// First-order optimizer with its state kept in `f64`.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        velocity: Vec<Vec<f64>>,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new<T: Scalar>(kind: OptimizerKind, lr: f64, params: &ParamStore<T>) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {lr} must be finite and nonnegative"
            )));
        }
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect::<Vec<_>>()
        };
        Ok(match kind {
            OptimizerKind::SgdMomentum => Self::Sgd {
                lr,
                momentum: SGD_MOMENTUM,
                velocity: zeros(),
            },
            OptimizerKind::Adam => Self::Adam {
                lr,
                beta1: ADAM_BETA1,
                beta2: ADAM_BETA2,
                eps: ADAM_EPS,
                t: 0,
                m: zeros(),
                v: zeros(),
            },
        })
    }

    /// Applies one update; `grads` follows the parameter store order.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        let tensors = params.tensors_mut();
        if grads.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                tensors.len()
            )));
        }
        if let Some((p, g)) = tensors.iter().zip(grads).find(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        match self {
            Self::Sgd { lr, momentum, velocity } => {
                for ((p, g), vel) in tensors.iter_mut().zip(grads).zip(velocity) {
                    for ((w, &d), u) in p.data_mut().iter_mut().zip(g.data()).zip(vel) {
                        *u = *momentum * *u + d.as_f64();
                        *w = T::lit(w.as_f64() - *lr * *u);
                    }
                }
            }
            Self::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, g), m), v) in tensors.iter_mut().zip(grads).zip(m).zip(v) {
                    for (((w, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        let d = d.as_f64();
                        *mi = *beta1 * *mi + (1.0 - *beta1) * d;
                        *vi = *beta2 * *vi + (1.0 - *beta2) * d * d;
                        let step = *lr * (*mi / c1) / ((*vi / c2).sqrt() + *eps);
                        *w = T::lit(w.as_f64() - step);
                    }
                }
            }
        }
        Ok(())
    }
}
