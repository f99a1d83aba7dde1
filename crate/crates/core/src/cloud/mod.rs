//! Cloud-side models and aggregation.

mod baseline;
mod model;
mod stacks;

pub use baseline::{
    mlp3_param_count, solve_hidden_width, BaselineCache, BaselineKind, BaselineModel,
};
pub use model::{CloudCache, CloudModel, CloudSpec};
pub use stacks::StackSet;

use crate::error::{Error, Result};
use crate::nn::{mean_params, Params, Tensor};

/// FedAvg with uniform weights.
pub fn fedavg(candidates: &[Params]) -> Result<Params> {
    if candidates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let refs: Vec<&Params> = candidates.iter().collect();
    mean_params(&refs)
}

/// Any cloud architecture the training protocol can drive.
#[derive(Debug, Clone)]
pub enum CloudNet {
    Proposed(CloudModel),
    Baseline(BaselineModel),
}

#[derive(Debug, Clone)]
pub enum CloudNetCache {
    Proposed(CloudCache),
    Baseline(BaselineCache),
}

impl CloudNet {
    pub fn name(&self) -> String {
        match self {
            Self::Proposed(m) => format!("proposed(M={})", m.branches()),
            Self::Baseline(b) => b.kind().to_string(),
        }
    }

    fn stacks(&self) -> &StackSet {
        match self {
            Self::Proposed(m) => m.stacks(),
            Self::Baseline(b) => b.stacks(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.stacks().param_count()
    }

    pub fn l2_norm(&self) -> f64 {
        self.stacks().l2_norm()
    }

    pub fn params(&self) -> Vec<Params> {
        self.stacks().params()
    }

    pub fn zero_grads(&self) -> Vec<Params> {
        self.stacks().zero_grads()
    }

    pub fn set_params(&mut self, params: Vec<Params>) -> Result<()> {
        match self {
            Self::Proposed(m) => m.set_params(params),
            Self::Baseline(b) => b.stacks_mut().set_params(params),
        }
    }

    pub fn named_tensors(&self) -> Vec<Tensor> {
        self.stacks().named_tensors("cloud.")
    }

    pub fn load_named(&mut self, tensors: &[Tensor]) -> Result<()> {
        match self {
            Self::Proposed(m) => m.load_named(tensors),
            Self::Baseline(b) => b.stacks_mut().load_named("cloud.", tensors),
        }
    }

    /// Whether a network of `nodes` nodes can be served.
    pub fn check_nodes(&self, nodes: usize) -> Result<()> {
        match self {
            Self::Proposed(_) => Ok(()),
            Self::Baseline(b) => b.check_nodes(nodes),
        }
    }

    /// Logits for one sample from the signals of the reporting nodes.
    pub fn infer(
        &self,
        received: &[(usize, &[f64])],
        nodes: usize,
    ) -> Result<(Vec<f64>, CloudNetCache)> {
        match self {
            Self::Proposed(m) => {
                let ys: Vec<&[f64]> = received.iter().map(|(_, y)| *y).collect();
                let (x, c) = m.cloud_infer(&ys)?;
                Ok((x, CloudNetCache::Proposed(c)))
            }
            Self::Baseline(b) => {
                let (x, c) = b.infer(received, nodes)?;
                Ok((x, CloudNetCache::Baseline(c)))
            }
        }
    }

    pub fn backward_sample(
        &self,
        cache: &CloudNetCache,
        grad_x: &[f64],
        grads: &mut [Params],
    ) -> Result<Vec<Vec<f64>>> {
        match (self, cache) {
            (Self::Proposed(m), CloudNetCache::Proposed(c)) => m.backward_sample(c, grad_x, grads),
            (Self::Baseline(b), CloudNetCache::Baseline(c)) => b.backward_sample(c, grad_x, grads),
            _ => Err(Error::StaleCache(
                "cache from a different cloud architecture",
            )),
        }
    }

    pub fn update(&mut self, grads: &[Params], lr: f64, batch: usize) -> Result<()> {
        match self {
            Self::Proposed(m) => m.cloud_update(grads, lr, batch),
            Self::Baseline(b) => b.stacks_mut().update(grads, lr, batch),
        }
    }
}
