use crate::error::{Error, Result};
use crate::nn::{LayerStack, Optimizer, OptimizerKind, Params, Tensor};

/// Named layer stacks updated together, each with its own optimizer state.
#[derive(Debug, Clone)]
pub struct StackSet {
    names: Vec<String>,
    stacks: Vec<LayerStack>,
    optimizers: Vec<Optimizer>,
}

impl StackSet {
    pub fn new(named: Vec<(String, LayerStack)>, optimizer: OptimizerKind) -> Self {
        let (names, stacks): (Vec<_>, Vec<_>) = named.into_iter().unzip();
        let optimizers = stacks
            .iter()
            .map(|s| Optimizer::new(optimizer, s.params()))
            .collect();
        Self {
            names,
            stacks,
            optimizers,
        }
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }

    pub fn stack(&self, i: usize) -> &LayerStack {
        &self.stacks[i]
    }

    pub fn stacks(&self) -> &[LayerStack] {
        &self.stacks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn zero_grads(&self) -> Vec<Params> {
        self.stacks
            .iter()
            .map(|s| Params::zeros_like(s.params()))
            .collect()
    }

    pub fn params(&self) -> Vec<Params> {
        self.stacks.iter().map(|s| s.params().clone()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.stacks.iter().map(LayerStack::param_count).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.stacks
            .iter()
            .map(|s| s.params().iter_values().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    fn check_grads(&self, grads: &[Params]) -> Result<()> {
        if grads.len() != self.stacks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient sets for {} stacks",
                grads.len(),
                self.stacks.len()
            )));
        }
        for (s, g) in self.stacks.iter().zip(grads) {
            s.params().check_same_shape(g)?;
        }
        Ok(())
    }

    /// Applies `params -= lr * grads / batch` (or the optimizer's equivalent)
    /// to every stack. Shapes are checked before anything is modified.
    pub fn update(&mut self, grads: &[Params], lr: f64, batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        self.check_grads(grads)?;
        for ((stack, opt), g) in self.stacks.iter_mut().zip(&mut self.optimizers).zip(grads) {
            let mut mean = g.clone();
            mean.scale(1.0 / batch as f64);
            let mut params = stack.params().clone();
            opt.step(&mut params, &mean, lr)?;
            stack.set_params(params)?;
        }
        Ok(())
    }

    pub fn set_params(&mut self, params: Vec<Params>) -> Result<()> {
        self.check_grads(&params)?;
        for (stack, p) in self.stacks.iter_mut().zip(params) {
            stack.set_params(p)?;
        }
        Ok(())
    }

    /// Tensors with names prefixed by their stack, e.g. `branch0.inner.dense1.bias`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<Tensor> {
        self.names
            .iter()
            .zip(&self.stacks)
            .flat_map(|(name, stack)| {
                stack.params().tensors().iter().map(move |t| Tensor {
                    name: format!("{prefix}{name}.{}", t.name),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
            })
            .collect()
    }

    /// Inverse of [`StackSet::named_tensors`]; every tensor must be present with the same shape.
    pub fn load_named(&mut self, prefix: &str, tensors: &[Tensor]) -> Result<()> {
        let mut loaded = Vec::with_capacity(self.stacks.len());
        for (name, stack) in self.names.iter().zip(&self.stacks) {
            let mut params = stack.params().clone();
            for t in params.tensors_mut() {
                let full = format!("{prefix}{name}.{}", t.name);
                let src = tensors
                    .iter()
                    .find(|x| x.name == full)
                    .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {full}")))?;
                if src.shape != t.shape {
                    return Err(Error::ShapeMismatch(format!(
                        "{full}: stored {:?}, expected {:?}",
                        src.shape, t.shape
                    )));
                }
                t.data.clone_from(&src.data);
            }
            loaded.push(params);
        }
        self.set_params(loaded)
    }
}
