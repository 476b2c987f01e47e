use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::nn::params::ParameterSet;

pub const DEFAULT_LR: f64 = 2e-4;

/// Adam moments and hyperparameters for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub(crate) m: BTreeMap<String, Vec<f64>>,
    pub(crate) v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(DEFAULT_LR)
    }
}

/// One bias-corrected Adam update. Every parameter must carry a gradient;
/// gradients are cleared afterwards.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad.is_none()) {
        return Err(PifmError::State(format!("parameter `{name}` has no gradient")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (name, tensor) in params.iter_mut() {
        let g = tensor.grad.take().expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        if m.len() != g.len() {
            return Err(PifmError::State(format!(
                "optimizer moments for `{name}` have {} entries, parameter has {}",
                m.len(),
                g.len()
            )));
        }
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            tensor.data[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn one_param(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert_matrix("w", Matrix::filled(2, 2, value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = one_param(0.3);
        let before = p.clone();
        let mut s = AdamState::default();
        p.zero_grads();
        adam_step(&mut p, &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().data, before.get("w").unwrap().data);
        assert!(p.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Closed form for step 1: m̂ = g, v̂ = g², update = lr * g / (|g| + eps).
        for g in [0.5, -3.0, 1e-3] {
            let mut p = one_param(1.0);
            let mut s = AdamState::new(2e-4);
            p.accumulate_grad("w", &[g; 4]).unwrap();
            adam_step(&mut p, &mut s).unwrap();
            let expected = 1.0 - 2e-4 * g / (g.abs() + 1e-8);
            for &x in &p.get("w").unwrap().data {
                assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
            }
        }
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut p = one_param(0.0);
        let mut s = AdamState::default();
        assert!(matches!(adam_step(&mut p, &mut s), Err(PifmError::State(_))));
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p = one_param(0.7);
            let mut s = AdamState::new(1e-2);
            for k in 0..50 {
                let w = p.get("w").unwrap().data.clone();
                let g: Vec<f64> = w.iter().map(|x| 2.0 * x + (k as f64).sin()).collect();
                p.accumulate_grad("w", &g).unwrap();
                adam_step(&mut p, &mut s).unwrap();
            }
            p.get("w").unwrap().data.clone()
        };
        assert_eq!(run(), run());
    }
}
