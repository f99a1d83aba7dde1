//! Reference cloud architectures the multi-branch model is compared against.

use serde::{Deserialize, Serialize};

use super::stacks::StackSet;
use crate::error::{Error, Result};
use crate::nn::{ForwardCache, LayerStack, OptimizerKind, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// `x = sum_i y_i`; no trainable parameters, needs `S = X`.
    SumAgg,
    /// One MLP over the concatenation of a fixed number of signals.
    CatNet { nodes: usize },
    /// One MLP head per node, outputs summed over the reporting nodes.
    MhNet { heads: usize },
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::SumAgg => write!(f, "sumagg"),
            Self::CatNet { nodes } => write!(f, "catnet({nodes})"),
            Self::MhNet { heads } => write!(f, "mhnet({heads})"),
        }
    }
}

/// Parameter count of the MLP `[input, h, h, output]`.
pub fn mlp3_param_count(input: usize, hidden: usize, output: usize) -> usize {
    input * hidden + hidden + hidden * hidden + hidden + hidden * output + output
}

/// Smallest hidden width whose `copies` MLPs `[input, h, h, output]` land
/// closest to `target` parameters. Fails if the best match is off by more
/// than `tolerance` (relative).
pub fn solve_hidden_width(
    target: usize,
    input: usize,
    output: usize,
    copies: usize,
    tolerance: f64,
) -> Result<usize> {
    if copies == 0 || target == 0 {
        return Err(Error::Config("width solver needs a positive budget".into()));
    }
    let count = |h: usize| copies * mlp3_param_count(input, h, output);
    let mut best = (1usize, usize::MAX);
    let mut h = 1;
    loop {
        let c = count(h);
        let diff = c.abs_diff(target);
        if diff < best.1 {
            best = (h, diff);
        }
        if c > target {
            break;
        }
        h += 1;
    }
    let rel = best.1 as f64 / target as f64;
    if rel > tolerance {
        return Err(Error::Config(format!(
            "no hidden width matches {target} parameters within {:.1}% (closest: width {}, off by {:.1}%)",
            tolerance * 100.0,
            best.0,
            rel * 100.0
        )));
    }
    Ok(best.0)
}

#[derive(Debug, Clone)]
pub struct BaselineModel {
    kind: BaselineKind,
    message_len: usize,
    classes: usize,
    stacks: StackSet,
}

#[derive(Debug, Clone)]
pub struct BaselineCache {
    /// Node index of each input, in input order.
    nodes: Vec<usize>,
    stacks: Vec<ForwardCache>,
}

impl BaselineModel {
    pub fn sum_agg(message_len: usize, classes: usize) -> Result<Self> {
        if message_len != classes {
            return Err(Error::Config(format!(
                "sum aggregation needs message length = classes, got {message_len} and {classes}"
            )));
        }
        Ok(Self {
            kind: BaselineKind::SumAgg,
            message_len,
            classes,
            stacks: StackSet::new(Vec::new(), OptimizerKind::Sgd),
        })
    }

    pub fn catnet(
        nodes: usize,
        message_len: usize,
        hidden: usize,
        classes: usize,
        optimizer: OptimizerKind,
        seed: u64,
    ) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Config("catnet needs at least one node".into()));
        }
        let stack = LayerStack::mlp(&[nodes * message_len, hidden, hidden, classes], seed)?;
        Ok(Self {
            kind: BaselineKind::CatNet { nodes },
            message_len,
            classes,
            stacks: StackSet::new(vec![("catnet".into(), stack)], optimizer),
        })
    }

    pub fn mhnet(
        heads: usize,
        message_len: usize,
        hidden: usize,
        classes: usize,
        optimizer: OptimizerKind,
        mut seed_for: impl FnMut(usize) -> u64,
    ) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Config("mhnet needs at least one head".into()));
        }
        let named = (0..heads)
            .map(|i| {
                LayerStack::mlp(&[message_len, hidden, hidden, classes], seed_for(i))
                    .map(|s| (format!("head{i}"), s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: BaselineKind::MhNet { heads },
            message_len,
            classes,
            stacks: StackSet::new(named, optimizer),
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn stacks(&self) -> &StackSet {
        &self.stacks
    }

    pub fn stacks_mut(&mut self) -> &mut StackSet {
        &mut self.stacks
    }

    pub fn param_count(&self) -> usize {
        self.stacks.param_count()
    }

    /// Checks that a network of `nodes` nodes can be served at all.
    pub fn check_nodes(&self, nodes: usize) -> Result<()> {
        match self.kind {
            BaselineKind::CatNet { nodes: fixed } if nodes != fixed => Err(Error::NodeCount {
                expected: fixed,
                got: nodes,
            }),
            BaselineKind::MhNet { heads } if nodes > heads => Err(Error::NodeCount {
                expected: heads,
                got: nodes,
            }),
            _ => Ok(()),
        }
    }

    /// `received` pairs each signal with its node index; `nodes` is the
    /// network size. CatNet fills the slots of silent nodes with zeros.
    pub fn infer(
        &self,
        received: &[(usize, &[f64])],
        nodes: usize,
    ) -> Result<(Vec<f64>, BaselineCache)> {
        self.check_nodes(nodes)?;
        if received.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for &(i, y) in received {
            if i >= nodes {
                return Err(Error::NodeCount {
                    expected: nodes,
                    got: i + 1,
                });
            }
            if y.len() != self.message_len {
                return Err(Error::Dimension {
                    context: "received signal",
                    expected: self.message_len,
                    got: y.len(),
                });
            }
        }
        let node_ids: Vec<usize> = received.iter().map(|(i, _)| *i).collect();
        match self.kind {
            BaselineKind::SumAgg => {
                let mut x = vec![0.0; self.classes];
                for (_, y) in received {
                    for (xi, yi) in x.iter_mut().zip(*y) {
                        *xi += yi;
                    }
                }
                Ok((
                    x,
                    BaselineCache {
                        nodes: node_ids,
                        stacks: Vec::new(),
                    },
                ))
            }
            BaselineKind::CatNet { nodes: fixed } => {
                let s = self.message_len;
                let mut concat = vec![0.0; fixed * s];
                for &(i, y) in received {
                    concat[i * s..(i + 1) * s].copy_from_slice(y);
                }
                let (x, cache) = self.stacks.stack(0).forward(&concat)?;
                Ok((
                    x,
                    BaselineCache {
                        nodes: node_ids,
                        stacks: vec![cache],
                    },
                ))
            }
            BaselineKind::MhNet { .. } => {
                let mut x = vec![0.0; self.classes];
                let mut caches = Vec::with_capacity(received.len());
                for &(i, y) in received {
                    let (out, cache) = self.stacks.stack(i).forward(y)?;
                    for (xi, oi) in x.iter_mut().zip(&out) {
                        *xi += oi;
                    }
                    caches.push(cache);
                }
                Ok((
                    x,
                    BaselineCache {
                        nodes: node_ids,
                        stacks: caches,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients and returns `dx/dy_i * grad_x` per input.
    pub fn backward_sample(
        &self,
        cache: &BaselineCache,
        grad_x: &[f64],
        grads: &mut [Params],
    ) -> Result<Vec<Vec<f64>>> {
        if grad_x.len() != self.classes {
            return Err(Error::Dimension {
                context: "logit gradient",
                expected: self.classes,
                got: grad_x.len(),
            });
        }
        match self.kind {
            BaselineKind::SumAgg => Ok(vec![grad_x.to_vec(); cache.nodes.len()]),
            BaselineKind::CatNet { .. } => {
                let c = cache
                    .stacks
                    .first()
                    .ok_or(Error::StaleCache("catnet cache"))?;
                let (g, _) = self
                    .stacks
                    .stack(0)
                    .backward_accumulate(c, grad_x, &mut grads[0])?;
                let s = self.message_len;
                Ok(cache
                    .nodes
                    .iter()
                    .map(|&i| g[i * s..(i + 1) * s].to_vec())
                    .collect())
            }
            BaselineKind::MhNet { .. } => {
                if cache.stacks.len() != cache.nodes.len() {
                    return Err(Error::StaleCache("mhnet cache"));
                }
                cache
                    .nodes
                    .iter()
                    .zip(&cache.stacks)
                    .map(|(&i, c)| {
                        self.stacks
                            .stack(i)
                            .backward_accumulate(c, grad_x, &mut grads[i])
                            .map(|(g, _)| g)
                    })
                    .collect()
            }
        }
    }
}
