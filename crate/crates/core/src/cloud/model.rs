//! Multi-branch cloud model: `x = sum_m u_m( sum_i z_m(y_i) )`.
//!
//! Each branch pairs an inner network `z_m: R^S -> R^R`, shared by every
//! edge node's signal, with an outer network `u_m: R^R -> R^X`. Sum pooling
//! over nodes makes the output invariant to node order and leaves the
//! parameter count independent of how many nodes report.

use serde::{Deserialize, Serialize};

use super::stacks::StackSet;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, LayerStack, OptimizerKind, Params, Tensor};

/// Gradients of one sample's per-node received signals.
pub type SampleMessages = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub message_len: usize,
    pub latent: usize,
    pub classes: usize,
    pub branches: usize,
    pub hidden: usize,
}

impl CloudSpec {
    pub fn inner_widths(&self) -> [usize; 3] {
        [self.message_len, self.hidden, self.latent]
    }

    pub fn outer_widths(&self) -> [usize; 3] {
        [self.latent, self.hidden, self.classes]
    }

    /// Parameter count of the full model, computed from the widths alone.
    pub fn param_count(&self) -> usize {
        let mlp = |w: [usize; 3]| w[0] * w[1] + w[1] + w[1] * w[2] + w[2];
        self.branches * (mlp(self.inner_widths()) + mlp(self.outer_widths()))
    }
}

#[derive(Debug, Clone)]
pub struct CloudModel {
    spec: CloudSpec,
    stacks: StackSet,
}

/// Forward record of one sample.
#[derive(Debug, Clone)]
pub struct CloudCache {
    /// `inner[m][i]`: branch `m`, input `i`.
    inner: Vec<Vec<ForwardCache>>,
    outer: Vec<ForwardCache>,
}

impl CloudCache {
    pub fn inputs(&self) -> usize {
        self.inner.first().map_or(0, Vec::len)
    }
}

impl CloudModel {
    /// Branch `m` is seeded with `seed_for(m)`; the inner network uses the
    /// even stream and the outer network the odd one.
    pub fn new(
        spec: CloudSpec,
        optimizer: OptimizerKind,
        mut seed_for: impl FnMut(usize) -> u64,
    ) -> Result<Self> {
        if spec.branches == 0 {
            return Err(Error::Config(
                "cloud model needs at least one branch".into(),
            ));
        }
        let mut named = Vec::with_capacity(2 * spec.branches);
        for m in 0..spec.branches {
            let seed = seed_for(m);
            named.push((
                format!("branch{m}.inner"),
                LayerStack::mlp(&spec.inner_widths(), seed.wrapping_mul(2))?,
            ));
            named.push((
                format!("branch{m}.outer"),
                LayerStack::mlp(&spec.outer_widths(), seed.wrapping_mul(2).wrapping_add(1))?,
            ));
        }
        Ok(Self {
            spec,
            stacks: StackSet::new(named, optimizer),
        })
    }

    pub fn spec(&self) -> &CloudSpec {
        &self.spec
    }

    pub fn branches(&self) -> usize {
        self.spec.branches
    }

    pub fn inner(&self, m: usize) -> &LayerStack {
        self.stacks.stack(2 * m)
    }

    pub fn outer(&self, m: usize) -> &LayerStack {
        self.stacks.stack(2 * m + 1)
    }

    pub fn stacks(&self) -> &StackSet {
        &self.stacks
    }

    pub fn param_count(&self) -> usize {
        self.stacks.param_count()
    }

    pub fn params(&self) -> Vec<Params> {
        self.stacks.params()
    }

    pub fn set_params(&mut self, params: Vec<Params>) -> Result<()> {
        self.stacks.set_params(params)
    }

    pub fn zero_grads(&self) -> Vec<Params> {
        self.stacks.zero_grads()
    }

    pub fn named_tensors(&self) -> Vec<Tensor> {
        self.stacks.named_tensors("cloud.")
    }

    pub fn load_named(&mut self, tensors: &[Tensor]) -> Result<()> {
        self.stacks.load_named("cloud.", tensors)
    }

    /// Cooperative inference for one sample.
    pub fn cloud_infer(&self, received: &[&[f64]]) -> Result<(Vec<f64>, CloudCache)> {
        if received.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for y in received {
            if y.len() != self.spec.message_len {
                return Err(Error::Dimension {
                    context: "received signal",
                    expected: self.spec.message_len,
                    got: y.len(),
                });
            }
        }
        let mut x = vec![0.0; self.spec.classes];
        let mut inner_caches = Vec::with_capacity(self.spec.branches);
        let mut outer_caches = Vec::with_capacity(self.spec.branches);
        for m in 0..self.spec.branches {
            let mut pooled = vec![0.0; self.spec.latent];
            let mut caches = Vec::with_capacity(received.len());
            for y in received {
                let (r, cache) = self.inner(m).forward(y)?;
                for (p, v) in pooled.iter_mut().zip(&r) {
                    *p += v;
                }
                caches.push(cache);
            }
            let (q, cache) = self.outer(m).forward(&pooled)?;
            for (xi, qi) in x.iter_mut().zip(&q) {
                *xi += qi;
            }
            inner_caches.push(caches);
            outer_caches.push(cache);
        }
        Ok((
            x,
            CloudCache {
                inner: inner_caches,
                outer: outer_caches,
            },
        ))
    }

    /// Accumulates this sample's parameter gradients into `grads` and returns
    /// the per-input messages `m_i = (dx/dy_i) grad_x` in input order.
    ///
    /// Only inputs that were present in the forward pass contribute, which is
    /// exactly the active-node accumulation of asynchronous rounds.
    pub fn backward_sample(
        &self,
        cache: &CloudCache,
        grad_x: &[f64],
        grads: &mut [Params],
    ) -> Result<Vec<Vec<f64>>> {
        if cache.outer.len() != self.spec.branches || cache.inner.len() != self.spec.branches {
            return Err(Error::StaleCache("cloud cache branch count"));
        }
        if grads.len() != self.stacks.len() {
            return Err(Error::ShapeMismatch("cloud gradient set count".into()));
        }
        let n = cache.inputs();
        let mut messages = vec![vec![0.0; self.spec.message_len]; n];
        for m in 0..self.spec.branches {
            let (g_pooled, _) = self.outer(m).backward_accumulate(
                &cache.outer[m],
                grad_x,
                &mut grads[2 * m + 1],
            )?;
            for (i, inner_cache) in cache.inner[m].iter().enumerate() {
                let (g_y, _) =
                    self.inner(m)
                        .backward_accumulate(inner_cache, &g_pooled, &mut grads[2 * m])?;
                for (acc, v) in messages[i].iter_mut().zip(&g_y) {
                    *acc += v;
                }
            }
        }
        Ok(messages)
    }

    /// Batch backward: summed gradients and per-sample messages.
    pub fn cloud_backward(
        &self,
        caches: &[CloudCache],
        grads_x: &[Vec<f64>],
    ) -> Result<(Vec<Params>, Vec<SampleMessages>)> {
        if caches.len() != grads_x.len() {
            return Err(Error::Dimension {
                context: "cloud backward samples",
                expected: caches.len(),
                got: grads_x.len(),
            });
        }
        let mut grads = self.zero_grads();
        let messages = caches
            .iter()
            .zip(grads_x)
            .map(|(c, g)| self.backward_sample(c, g, &mut grads))
            .collect::<Result<Vec<_>>>()?;
        Ok((grads, messages))
    }

    /// Per-branch SGD (or Adam) with the `1/batch` average.
    pub fn cloud_update(&mut self, grads: &[Params], lr: f64, batch: usize) -> Result<()> {
        self.stacks.update(grads, lr, batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(m: usize) -> CloudSpec {
        CloudSpec {
            message_len: 4,
            latent: 3,
            classes: 2,
            branches: m,
            hidden: 5,
        }
    }

    #[test]
    fn param_count_from_spec() {
        let model = CloudModel::new(spec(3), OptimizerKind::Sgd, |m| m as u64).unwrap();
        assert_eq!(model.param_count(), spec(3).param_count());
    }

    #[test]
    fn single_branch_single_input_is_composition() {
        let model = CloudModel::new(spec(1), OptimizerKind::Sgd, |_| 11).unwrap();
        let y = [0.3, -0.2, 0.9, 0.1];
        let (x, _) = model.cloud_infer(&[&y]).unwrap();
        let (r, _) = model.inner(0).forward(&y).unwrap();
        let (q, _) = model.outer(0).forward(&r).unwrap();
        assert_eq!(x, q);
    }

    #[test]
    fn rejects_empty_and_bad_length() {
        let model = CloudModel::new(spec(2), OptimizerKind::Sgd, |m| m as u64).unwrap();
        assert!(matches!(model.cloud_infer(&[]), Err(Error::EmptyBatch)));
        assert!(model.cloud_infer(&[&[1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_everything() {
        let model = CloudModel::new(spec(2), OptimizerKind::Sgd, |m| 5 + m as u64).unwrap();
        let ys = [[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0]];
        let (_, cache) = model.cloud_infer(&[&ys[0], &ys[1]]).unwrap();
        let (grads, msgs) = model.cloud_backward(&[cache], &[vec![0.0, 0.0]]).unwrap();
        assert!(grads.iter().all(Params::is_zero));
        assert!(msgs[0].iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_grads_update_is_noop_and_half_batches_combine() {
        let mut model = CloudModel::new(spec(2), OptimizerKind::Sgd, |m| 5 + m as u64).unwrap();
        let before = model.params();
        model.cloud_update(&model.zero_grads(), 0.5, 4).unwrap();
        assert_eq!(model.params(), before);

        let ys: Vec<[f64; 4]> = (0..4)
            .map(|b| [0.1 * b as f64, -0.2, 0.3, 0.05 * b as f64])
            .collect();
        let mut caches = Vec::new();
        let mut gx = Vec::new();
        for y in &ys {
            let (x, c) = model.cloud_infer(&[y]).unwrap();
            caches.push(c);
            gx.push(vec![x[0] - 1.0, x[1]]);
        }
        let (full, _) = model.cloud_backward(&caches, &gx).unwrap();
        let (h1, _) = model.cloud_backward(&caches[..2], &gx[..2]).unwrap();
        let (h2, _) = model.cloud_backward(&caches[2..], &gx[2..]).unwrap();
        let mut a = model.clone();
        a.cloud_update(&full, 0.1, 4).unwrap();
        let mut combined = h1.clone();
        for (c, h) in combined.iter_mut().zip(&h2) {
            c.axpy(1.0, h).unwrap();
        }
        let mut b = model.clone();
        b.cloud_update(&combined, 0.1, 4).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert!(pa.max_relative_deviation(&pb, 1e-12).unwrap() < 1e-13);
        }
    }
}
