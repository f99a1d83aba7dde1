use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, shaped array of 64-bit floats stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors. Gradients use the same type so that
/// shapes and names mirror their parameters exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(other: &Params) -> Self {
        Self {
            tensors: other
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    /// Total number of scalar entries.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn iter_values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter_values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.iter_values().all(|v| v == 0.0)
    }

    pub fn check_same_shape(&self, other: &Params) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape != b.shape || a.name != b.name {
                return Err(Error::ShapeMismatch(format!(
                    "{}{:?} vs {}{:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Params) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.iter_values_mut() {
            *v *= alpha;
        }
    }

    /// Largest entrywise relative deviation `|a-b| / max(|a|, |b|, floor)`.
    pub fn max_relative_deviation(&self, other: &Params, floor: f64) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .iter_values()
            .zip(other.iter_values())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter_values().collect()
    }
}

/// Elementwise mean of identically shaped parameter sets, summed in index order.
pub fn mean_params(sets: &[&Params]) -> Result<Params> {
    let first = sets.first().ok_or(Error::EmptyBatch)?;
    let mut out = Params::zeros_like(first);
    for set in sets {
        out.axpy(1.0, set)?;
    }
    out.scale(1.0 / sets.len() as f64);
    Ok(out)
}
