use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Params, Tensor};
use super::projection::{projection_backward, projection_forward, PowerMode};
use crate::error::{Error, Result};

/// One layer of a feed-forward stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `y = W x + b` with `W` stored `out x in`, row-major.
    Dense {
        input: usize,
        output: usize,
    },
    Relu,
    /// Appends a side-input vector of length `side` to the activation.
    Concat {
        side: usize,
    },
    Projection {
        budget: f64,
        mode: PowerMode,
    },
}

/// Ordered layer descriptors plus their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    input_dim: usize,
    layers: Vec<Layer>,
    params: Params,
    seed: u64,
    /// Bumped on every parameter mutation; caches remember the value they saw.
    #[serde(default)]
    version: u64,
}

/// Activations recorded by [`LayerStack::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` is the output of layer `l`.
    activations: Vec<Vec<f64>>,
    version: u64,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    /// Input to layer `l`.
    pub fn pre(&self, l: usize) -> &[f64] {
        &self.activations[l]
    }

    /// Output of layer `l`.
    pub fn post(&self, l: usize) -> &[f64] {
        &self.activations[l + 1]
    }

    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub params: Params,
    pub input: Vec<f64>,
    /// Gradient with respect to side inputs, one entry per `Concat` layer.
    pub side: Vec<Vec<f64>>,
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl LayerStack {
    /// Builds a stack and initializes dense weights uniformly in
    /// `±sqrt(6 / (fan_in + fan_out))` with zero biases.
    pub fn new(input_dim: usize, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut dim = input_dim;
        let mut tensors = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense_idx = 0;
        for (l, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output } => {
                    if input != dim {
                        return Err(Error::LayerDimension {
                            layer: l,
                            expected: dim,
                            got: input,
                        });
                    }
                    let limit = glorot_limit(input, output);
                    let mut w =
                        Tensor::zeros(format!("dense{dense_idx}.weight"), vec![output, input]);
                    for v in w.data.iter_mut() {
                        *v = rng.random_range(-limit..limit);
                    }
                    tensors.push(w);
                    tensors.push(Tensor::zeros(
                        format!("dense{dense_idx}.bias"),
                        vec![output],
                    ));
                    dense_idx += 1;
                    dim = output;
                }
                Layer::Relu => {}
                Layer::Concat { side } => dim += side,
                Layer::Projection { budget, .. } => {
                    if !dim.is_multiple_of(2) {
                        return Err(Error::OddLength(dim));
                    }
                    if budget < 0.0 {
                        return Err(Error::NegativePower(budget));
                    }
                }
            }
        }
        Ok(Self {
            input_dim,
            layers,
            params: Params::new(tensors),
            seed,
            version: 0,
        })
    }

    /// A plain multilayer perceptron: dense layers with ReLU between them.
    pub fn mlp(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        let mut layers = Vec::new();
        for (k, pair) in widths.windows(2).enumerate() {
            if k > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Dense {
                input: pair[0],
                output: pair[1],
            });
        }
        Self::new(widths[0], layers, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .fold(self.input_dim, |dim, layer| match *layer {
                Layer::Dense { output, .. } => output,
                Layer::Concat { side } => dim + side,
                _ => dim,
            })
    }

    /// Total side-input length consumed by `Concat` layers.
    pub fn side_dim(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Concat { side } => side,
                _ => 0,
            })
            .sum()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut Params {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, params: Params) -> Result<()> {
        self.params.check_same_shape(&params)?;
        self.params = params;
        self.version += 1;
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_with_side(input, &[])
    }

    /// Forward pass; `side` is split across `Concat` layers in order.
    pub fn forward_with_side(
        &self,
        input: &[f64],
        side: &[f64],
    ) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim {
            return Err(Error::LayerDimension {
                layer: 0,
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if side.len() != self.side_dim() {
            return Err(Error::Dimension {
                context: "side input",
                expected: self.side_dim(),
                got: side.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let mut side_offset = 0;
        let mut dense_idx = 0;
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let y = match *layer {
                Layer::Dense { input, output } => {
                    let w = &self.params.tensors()[2 * dense_idx].data;
                    let b = &self.params.tensors()[2 * dense_idx + 1].data;
                    dense_idx += 1;
                    (0..output)
                        .map(|o| {
                            let row = &w[o * input..(o + 1) * input];
                            row.iter().zip(x).fold(b[o], |acc, (wi, xi)| acc + wi * xi)
                        })
                        .collect()
                }
                Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
                Layer::Concat { side: n } => {
                    let mut y = x.clone();
                    y.extend_from_slice(&side[side_offset..side_offset + n]);
                    side_offset += n;
                    y
                }
                Layer::Projection { budget, mode } => projection_forward(x, budget, mode)?,
            };
            activations.push(y);
        }
        let out = activations.last().expect("non-empty").clone();
        Ok((
            out,
            ForwardCache {
                activations,
                version: self.version,
            },
        ))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache("parameters changed since forward"));
        }
        if cache.depth() != self.layers.len() || cache.input().len() != self.input_dim {
            return Err(Error::StaleCache("cache shape does not match stack"));
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientSet> {
        let mut params = Params::zeros_like(&self.params);
        let (input, side) = self.backward_accumulate(cache, upstream, &mut params)?;
        Ok(GradientSet {
            params,
            input,
            side,
        })
    }

    /// Adds this sample's parameter gradient into `acc` and returns the input
    /// gradient together with one gradient per `Concat` side input.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        acc: &mut Params,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_cache(cache)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        self.params.check_same_shape(acc)?;
        let mut g = upstream.to_vec();
        let mut side_grads = Vec::new();
        let mut dense_idx = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Dense { .. }))
            .count();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = cache.pre(l);
            g = match *layer {
                Layer::Dense { input, output } => {
                    dense_idx -= 1;
                    let w = &self.params.tensors()[2 * dense_idx].data;
                    {
                        let tensors = acc.tensors_mut();
                        let gw = &mut tensors[2 * dense_idx].data;
                        for o in 0..output {
                            let go = g[o];
                            if go != 0.0 {
                                for (gwi, xi) in gw[o * input..(o + 1) * input].iter_mut().zip(x) {
                                    *gwi += go * xi;
                                }
                            }
                        }
                        let gb = &mut tensors[2 * dense_idx + 1].data;
                        for (gbo, go) in gb.iter_mut().zip(&g) {
                            *gbo += go;
                        }
                    }
                    let mut gx = vec![0.0; input];
                    for o in 0..output {
                        let go = g[o];
                        if go != 0.0 {
                            for (gxi, wi) in gx.iter_mut().zip(&w[o * input..(o + 1) * input]) {
                                *gxi += go * wi;
                            }
                        }
                    }
                    gx
                }
                Layer::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect(),
                Layer::Concat { side } => {
                    let keep = g.len() - side;
                    side_grads.push(g[keep..].to_vec());
                    g.truncate(keep);
                    g
                }
                Layer::Projection { budget, mode } => projection_backward(x, budget, mode, &g)?,
            };
        }
        side_grads.reverse();
        Ok((g, side_grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense() -> LayerStack {
        let mut s = LayerStack::new(
            2,
            vec![Layer::Dense {
                input: 2,
                output: 2,
            }],
            0,
        )
        .unwrap();
        let p = s.params_mut();
        p.tensors_mut()[0].data = vec![1.0, 0.0, 0.0, 1.0];
        p.tensors_mut()[1].data = vec![0.0, 0.0];
        s
    }

    #[test]
    fn identity_dense_forward() {
        let (y, _) = identity_dense().forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn relu_forward() {
        let s = LayerStack::new(3, vec![Layer::Relu], 0).unwrap();
        assert_eq!(s.forward(&[-1.0, 2.0, 0.0]).unwrap().0, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn rejects_bad_dims() {
        let err = LayerStack::new(
            3,
            vec![
                Layer::Dense {
                    input: 3,
                    output: 4,
                },
                Layer::Relu,
                Layer::Dense {
                    input: 5,
                    output: 2,
                },
            ],
            1,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::LayerDimension {
                layer: 2,
                expected: 4,
                got: 5
            }
        ));
        let s = identity_dense();
        assert!(matches!(
            s.forward(&[1.0]),
            Err(Error::LayerDimension { layer: 0, .. })
        ));
    }

    #[test]
    fn linear_adjoint() {
        let mut s = LayerStack::new(
            3,
            vec![Layer::Dense {
                input: 3,
                output: 2,
            }],
            0,
        )
        .unwrap();
        s.params_mut().tensors_mut()[0].data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (_, cache) = s.forward(&[0.5, -1.0, 2.0]).unwrap();
        let g = s.backward(&cache, &[1.0, -1.0]).unwrap();
        assert_eq!(g.input, vec![-3.0, -3.0, -3.0]);
        assert_eq!(g.params.tensors()[1].data, vec![1.0, -1.0]);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let s = LayerStack::mlp(&[4, 5, 3], 9).unwrap();
        let (_, cache) = s.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = s.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.params.is_zero());
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut s = LayerStack::mlp(&[2, 3, 2], 4).unwrap();
        let (_, cache) = s.forward(&[1.0, 1.0]).unwrap();
        s.params_mut().scale(0.5);
        assert!(matches!(
            s.backward(&cache, &[1.0, 0.0]),
            Err(Error::StaleCache(_))
        ));
        let other = LayerStack::mlp(&[3, 2], 4).unwrap();
        let (_, cache) = other.forward(&[1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            s.backward(&cache, &[1.0, 0.0]),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn deterministic_init() {
        let a = LayerStack::mlp(&[6, 8, 4], 77).unwrap();
        let b = LayerStack::mlp(&[6, 8, 4], 77).unwrap();
        assert_eq!(a.params(), b.params());
        let c = LayerStack::mlp(&[6, 8, 4], 78).unwrap();
        assert_ne!(a.params(), c.params());
        assert_eq!(a.param_count(), 6 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn concat_side_input() {
        let s = LayerStack::new(
            2,
            vec![
                Layer::Concat { side: 1 },
                Layer::Dense {
                    input: 3,
                    output: 2,
                },
            ],
            3,
        )
        .unwrap();
        assert_eq!(s.side_dim(), 1);
        assert!(s.forward(&[1.0, 2.0]).is_err());
        let (_, cache) = s.forward_with_side(&[1.0, 2.0], &[0.5]).unwrap();
        let g = s.backward(&cache, &[1.0, 1.0]).unwrap();
        let w = &s.params().tensors()[0].data;
        assert_eq!(g.side.len(), 1);
        assert!((g.side[0][0] - (w[2] + w[5])).abs() < 1e-15);
        assert_eq!(g.input.len(), 2);
    }
}
