//! Edge nodes: local encoding under a power constraint and the local
//! parameter-update rules driven by gradients received over the downlink.
//!
//! None of these operations takes another node's data or parameters; the
//! only inputs are the node itself, its own caches, and signals addressed to
//! it.

use serde::{Deserialize, Serialize};

use crate::channel::FronthaulSignal;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, Layer, LayerStack, Optimizer, OptimizerKind, Params, PowerMode};

/// How channel-quality side information is fed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CqiTransform {
    Raw,
    /// `log10 |h|`, used when pathloss spreads magnitudes over decades.
    Log10,
}

const CQI_MAGNITUDE_FLOOR: f64 = 1e-12;

impl CqiTransform {
    pub fn apply(self, magnitude: &[f64]) -> Vec<f64> {
        match self {
            Self::Raw => magnitude.to_vec(),
            Self::Log10 => magnitude
                .iter()
                .map(|m| m.max(CQI_MAGNITUDE_FLOOR).log10())
                .collect(),
        }
    }
}

/// Shape of an edge encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub observation_len: usize,
    pub hidden: Vec<usize>,
    pub message_len: usize,
    pub power_mode: PowerMode,
    pub power_budget: f64,
    pub cqi: Option<CqiTransform>,
}

impl EncoderSpec {
    /// ReLU MLP followed by a linear message layer and the power projection.
    /// With CQI enabled, `|h|` is concatenated right before the message layer.
    pub fn layers(&self) -> Result<Vec<Layer>> {
        if !self.message_len.is_multiple_of(2) || self.message_len == 0 {
            return Err(Error::OddLength(self.message_len));
        }
        let mut layers = Vec::new();
        let mut dim = self.observation_len;
        for &h in &self.hidden {
            layers.push(Layer::Dense {
                input: dim,
                output: h,
            });
            layers.push(Layer::Relu);
            dim = h;
        }
        if self.cqi.is_some() {
            layers.push(Layer::Concat {
                side: self.message_len / 2,
            });
            dim += self.message_len / 2;
        }
        layers.push(Layer::Dense {
            input: dim,
            output: self.message_len,
        });
        layers.push(Layer::Projection {
            budget: self.power_budget,
            mode: self.power_mode,
        });
        Ok(layers)
    }

    pub fn build(&self, seed: u64) -> Result<LayerStack> {
        LayerStack::new(self.observation_len, self.layers()?, seed)
    }
}

/// A node's local view of the global state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObservation {
    pub values: Vec<f64>,
    pub sample_index: usize,
    pub source_index: usize,
}

#[derive(Debug, Clone)]
pub struct EdgeNode {
    pub id: usize,
    spec: EncoderSpec,
    encoder: LayerStack,
    optimizer: Optimizer,
}

impl EdgeNode {
    pub fn new(id: usize, spec: EncoderSpec, seed: u64, optimizer: OptimizerKind) -> Result<Self> {
        let encoder = spec.build(seed)?;
        let optimizer = Optimizer::new(optimizer, encoder.params());
        Ok(Self {
            id,
            spec,
            encoder,
            optimizer,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn encoder(&self) -> &LayerStack {
        &self.encoder
    }

    pub fn params(&self) -> &Params {
        self.encoder.params()
    }

    pub fn set_params(&mut self, params: Params) -> Result<()> {
        self.encoder.set_params(params)
    }

    pub fn message_len(&self) -> usize {
        self.spec.message_len
    }

    pub fn uses_cqi(&self) -> bool {
        self.spec.cqi.is_some()
    }

    /// `s_i = projection(f(a_i [, |h|]))`, plus the cache for local backprop.
    pub fn encode(
        &self,
        obs: &LocalObservation,
        cqi: Option<&[f64]>,
    ) -> Result<(FronthaulSignal, ForwardCache)> {
        let side = match (self.spec.cqi, cqi) {
            (Some(t), Some(mag)) => {
                if mag.len() != self.spec.message_len / 2 {
                    return Err(Error::Dimension {
                        context: "CQI length",
                        expected: self.spec.message_len / 2,
                        got: mag.len(),
                    });
                }
                t.apply(mag)
            }
            (None, None) => Vec::new(),
            (Some(_), None) => {
                return Err(Error::CqiMode("encoder expects CQI but none was given"))
            }
            (None, Some(_)) => {
                return Err(Error::CqiMode("CQI given to an encoder without CQI input"))
            }
        };
        let (s, cache) = self.encoder.forward_with_side(&obs.values, &side)?;
        Ok((FronthaulSignal::new(s)?, cache))
    }

    /// `sum_b (ds_b / dpsi) g_b` over the given samples.
    fn summed_gradient(&self, batch: &[(&ForwardCache, &[f64])]) -> Result<Params> {
        let mut acc = Params::zeros_like(self.encoder.params());
        for (cache, g) in batch {
            if g.len() != self.spec.message_len {
                return Err(Error::Dimension {
                    context: "edge gradient message",
                    expected: self.spec.message_len,
                    got: g.len(),
                });
            }
            self.encoder.backward_accumulate(cache, g, &mut acc)?;
        }
        Ok(acc)
    }

    fn averaged_gradient(&self, batch: &[(&ForwardCache, &[f64])]) -> Result<Params> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut g = self.summed_gradient(batch)?;
        g.scale(1.0 / batch.len() as f64);
        Ok(g)
    }

    /// `psi <- psi - (lr / B) sum_b (ds_b/dpsi) d_b` with exact gradients `d_b`.
    pub fn local_update_exact(&mut self, batch: &[(&ForwardCache, &[f64])], lr: f64) -> Result<()> {
        let g = self.averaged_gradient(batch)?;
        let mut params = self.encoder.params().clone();
        self.optimizer.step(&mut params, &g, lr)?;
        self.encoder.set_params(params)
    }

    /// Same rule with the decoded downlink signals `y_E` standing in for `d`.
    pub fn local_update_wireless(
        &mut self,
        batch: &[(&ForwardCache, &[f64])],
        lr: f64,
    ) -> Result<()> {
        self.local_update_exact(batch, lr)
    }

    /// Averages over the active samples only; an empty set leaves the
    /// encoder untouched. Returns whether an update was applied.
    pub fn local_update_async(
        &mut self,
        active: &[(&ForwardCache, &[f64])],
        lr: f64,
    ) -> Result<bool> {
        if active.is_empty() {
            return Ok(false);
        }
        self.local_update_exact(active, lr)?;
        Ok(true)
    }

    /// Candidate `psi_i = shared - (lr / |batch|) sum_b (ds_b/dpsi) g_b`.
    ///
    /// The caches must come from encoding with `shared` loaded, which is the
    /// case whenever the node holds the most recently dispatched parameters.
    /// An empty batch returns `shared` unchanged.
    pub fn local_update_shared(
        &mut self,
        shared: &Params,
        batch: &[(&ForwardCache, &[f64])],
        lr: f64,
    ) -> Result<Params> {
        self.encoder.params().check_same_shape(shared)?;
        let mut candidate = shared.clone();
        if batch.is_empty() {
            return Ok(candidate);
        }
        let g = self.averaged_gradient(batch)?;
        self.optimizer.step(&mut candidate, &g, lr)?;
        Ok(candidate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(cqi: Option<CqiTransform>) -> EncoderSpec {
        EncoderSpec {
            observation_len: 5,
            hidden: vec![6],
            message_len: 4,
            power_mode: PowerMode::PerBlock,
            power_budget: 1.0,
            cqi,
        }
    }

    fn obs(values: Vec<f64>) -> LocalObservation {
        LocalObservation {
            values,
            sample_index: 0,
            source_index: 0,
        }
    }

    #[test]
    fn zero_weights_emit_projected_bias() {
        let mut node = EdgeNode::new(0, spec(None), 3, OptimizerKind::Sgd).unwrap();
        let mut p = node.params().clone();
        p.scale(0.0);
        let last = p.tensors().len() - 1;
        p.tensors_mut()[last].data = vec![3.0, 0.1, 4.0, 0.2];
        node.set_params(p).unwrap();
        let (a, _) = node.encode(&obs(vec![1.0; 5]), None).unwrap();
        let (b, _) = node
            .encode(&obs(vec![-2.0, 0.0, 9.0, 1.0, 0.5]), None)
            .unwrap();
        assert_eq!(a, b);
        assert!((a.real()[0] - 0.6).abs() < 1e-15 && (a.real()[2] - 0.8).abs() < 1e-15);
        assert_eq!(a.real()[1], 0.1);
    }

    #[test]
    fn cqi_mode_mismatch() {
        let plain = EdgeNode::new(0, spec(None), 1, OptimizerKind::Sgd).unwrap();
        assert!(matches!(
            plain.encode(&obs(vec![0.0; 5]), Some(&[1.0, 1.0])),
            Err(Error::CqiMode(_))
        ));
        let cqi = EdgeNode::new(0, spec(Some(CqiTransform::Raw)), 1, OptimizerKind::Sgd).unwrap();
        assert!(matches!(
            cqi.encode(&obs(vec![0.0; 5]), None),
            Err(Error::CqiMode(_))
        ));
        assert!(cqi.encode(&obs(vec![0.0; 5]), Some(&[1.0, 0.5])).is_ok());
        assert!(cqi.encode(&obs(vec![0.0; 5]), Some(&[1.0])).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut node = EdgeNode::new(0, spec(None), 2, OptimizerKind::Sgd).unwrap();
        let before = node.params().clone();
        let (_, cache) = node.encode(&obs(vec![0.3; 5]), None).unwrap();
        let zero = [0.0; 4];
        node.local_update_exact(&[(&cache, &zero)], 0.5).unwrap();
        assert_eq!(node.params(), &before);
        assert!(matches!(
            node.local_update_exact(&[], 0.5),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn async_empty_is_noop_and_divisor_is_active_count() {
        let mut node = EdgeNode::new(0, spec(None), 2, OptimizerKind::Sgd).unwrap();
        let before = node.params().clone();
        assert!(!node.local_update_async(&[], 0.1).unwrap());
        assert_eq!(node.params(), &before);

        let (_, cache) = node
            .encode(&obs(vec![0.2, -0.1, 0.4, 0.0, 1.0]), None)
            .unwrap();
        let g = [0.5, -0.25, 0.1, 0.3];
        let mut single = node.clone();
        single.local_update_async(&[(&cache, &g)], 0.1).unwrap();
        let full = node.encoder().backward(&cache, &g).unwrap();
        let mut expected = before.clone();
        expected.axpy(-0.1, &full.params).unwrap();
        assert_eq!(single.params(), &expected);
    }

    #[test]
    fn batch_of_two_hand_average() {
        let node = EdgeNode::new(0, spec(None), 8, OptimizerKind::Sgd).unwrap();
        let (_, c1) = node
            .encode(&obs(vec![0.1, 0.2, 0.3, 0.4, 0.5]), None)
            .unwrap();
        let (_, c2) = node
            .encode(&obs(vec![-0.5, 0.0, 0.9, 0.1, 0.2]), None)
            .unwrap();
        let g1 = [1.0, 0.0, -1.0, 0.5];
        let g2 = [0.0, 2.0, 0.5, -0.5];
        let mut updated = node.clone();
        updated
            .local_update_wireless(&[(&c1, &g1), (&c2, &g2)], 0.2)
            .unwrap();
        let b1 = node.encoder().backward(&c1, &g1).unwrap().params;
        let b2 = node.encoder().backward(&c2, &g2).unwrap().params;
        let mut expected = node.params().clone();
        for (e, (x, y)) in expected
            .iter_values_mut()
            .zip(b1.iter_values().zip(b2.iter_values()))
        {
            *e -= 0.2 * (x + y) / 2.0;
        }
        assert!(
            updated
                .params()
                .max_relative_deviation(&expected, 1e-12)
                .unwrap()
                < 1e-14
        );
    }

    #[test]
    fn shared_update_starts_from_shared() {
        let mut node = EdgeNode::new(0, spec(None), 8, OptimizerKind::Sgd).unwrap();
        let shared = node.params().clone();
        let (_, cache) = node.encode(&obs(vec![0.0; 5]), None).unwrap();
        let zero = [0.0; 4];
        let cand = node
            .local_update_shared(&shared, &[(&cache, &zero)], 0.3)
            .unwrap();
        assert_eq!(cand, shared);
        let bad = Params::new(vec![]);
        assert!(node.local_update_shared(&bad, &[], 0.3).is_err());
    }
}
