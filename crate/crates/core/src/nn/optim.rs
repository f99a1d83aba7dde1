use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::Result;

/// `params <- params - lr * grads`.
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
    params.axpy(-lr, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::adam()),
            other => Err(crate::Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam { .. } => "adam",
        })
    }
}

/// Optimizer with whatever per-parameter state it needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        first: Params,
        second: Params,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &Params) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => Self::Adam {
                beta1,
                beta2,
                eps,
                step: 0,
                first: Params::zeros_like(like),
                second: Params::zeros_like(like),
            },
        }
    }

    /// Applies one step with the (already batch-averaged) gradient.
    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
        match self {
            Self::Sgd => sgd_step(params, grads, lr),
            Self::Adam {
                beta1,
                beta2,
                eps,
                step,
                first,
                second,
            } => {
                params.check_same_shape(grads)?;
                first.check_same_shape(grads)?;
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                let values = params.iter_values_mut();
                let moments = first.iter_values_mut().zip(second.iter_values_mut());
                for ((p, (m, v)), g) in values.zip(moments).zip(grads.iter_values()) {
                    *m = *beta1 * *m + (1.0 - *beta1) * g;
                    *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + *eps);
                }
                Ok(())
            }
        }
    }
}
