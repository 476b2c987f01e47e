use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::linalg::Matrix;

/// A named parameter with its optional accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(PifmError::dim(
                "Tensor::new",
                format!("shape {shape:?} with {} values", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// 1-D tensors are row vectors.
    pub fn as_matrix(&self) -> Matrix {
        let (r, c) = match self.shape.as_slice() {
            [] => (1, 1),
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        };
        Matrix::from_vec(r, c, self.data.clone()).expect("tensor shape is consistent")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Parameters keyed by name. Iteration order is the (sorted) name order, so
/// every reduction over parameters is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(PifmError::State(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: Matrix) -> Result<()> {
        let (r, c) = m.shape();
        self.insert(name, Tensor::new(vec![r, c], m.into_vec())?)
    }

    /// Glorot-uniform weight matrix.
    pub fn init_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        self.insert_matrix(name, m)
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert_matrix(name, Matrix::filled(rows, cols, value))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| PifmError::State(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| PifmError::State(format!("unknown parameter `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        Ok(self.get(name)?.as_matrix())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = Some(vec![0.0; t.data.len()]);
        }
    }

    pub fn clear_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Adds `g` into the gradient of `name`, creating it if needed.
    pub fn accumulate_grad(&mut self, name: &str, g: &[f64]) -> Result<()> {
        let t = self.get_mut(name)?;
        if g.len() != t.data.len() {
            return Err(PifmError::dim(
                "accumulate_grad",
                format!("{} gradient values for `{name}` of {}", g.len(), t.data.len()),
            ));
        }
        let acc = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .values()
            .filter_map(|t| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for t in self.tensors.values_mut() {
                if let Some(g) = t.grad.as_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradients from one backward pass, aligned with a parameter set by name.
/// Several of these are summed in a fixed order before an optimizer step.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    pub(crate) grads: BTreeMap<String, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn add_assign(&mut self, other: &GradientMap) {
        for (k, g) in &other.grads {
            match self.grads.get_mut(k) {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.grads.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Writes the gradients into `params`; parameters the pass never touched
    /// get explicit zeros.
    pub fn apply_to(&self, params: &mut ParameterSet) -> Result<()> {
        params.zero_grads();
        for (k, g) in &self.grads {
            params.accumulate_grad(k, g)?;
        }
        Ok(())
    }
}
