//! Rectified flow from a prior-informed source to clean graphs.
//!
//! The source `A_0` keeps observed entries and fills hidden ones with prior
//! probabilities plus Gaussian noise. Training regresses `v(A_t, t)` onto
//! `A_1 - A_0` along `A_t = (1-t) A_0 + t A_1`; sampling integrates the
//! learned field with `K` Euler steps.

mod net;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, ObservationMask};
use crate::linalg::Matrix;

pub use net::{velocity_forward, NetConfig, VelocityNet};
pub use train::{train_flow, train_flow_on_instances, EpochStats, FixedInstance, FlowTrainer, TrainedFlow};

/// Training and sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub sigma_s_train: f64,
    pub sigma_s_sample: f64,
    /// Euler steps.
    pub k: usize,
    pub lr: f64,
    /// When set, the learning rate follows a cosine from `lr` down to this
    /// value over `epochs`.
    pub lr_min: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub clamp_observed: bool,
    /// When set, each graph cycles through this many fixed masks instead of
    /// drawing a fresh one every epoch. Useful for costly per-instance priors.
    pub mask_pool: Option<usize>,
    pub grad_clip: Option<f64>,
    pub net: NetConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            sigma_s_train: 0.1,
            sigma_s_sample: 0.1,
            k: 1,
            lr: crate::nn::DEFAULT_LR,
            lr_min: None,
            batch_size: 64,
            epochs: 1000,
            clamp_observed: false,
            mask_pool: None,
            grad_clip: None,
            net: NetConfig::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s_train >= 0.0 && self.sigma_s_sample >= 0.0) {
            return Err(PifmError::Config("noise levels must be nonnegative".into()));
        }
        if self.k == 0 {
            return Err(PifmError::Config("K must be at least 1".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(PifmError::Config("batch size and learning rate must be positive".into()));
        }
        if self.lr_min.is_some_and(|m| !(m >= 0.0 && m <= self.lr)) {
            return Err(PifmError::Config("lr_min must lie in [0, lr]".into()));
        }
        if self.mask_pool == Some(0) {
            return Err(PifmError::Config("mask pool must hold at least one mask".into()));
        }
        self.net.validate()
    }

    /// Learning rate for `epoch` under the configured schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_min {
            None => self.lr,
            Some(lo) => {
                let frac = (epoch as f64 / self.epochs.max(1) as f64).min(1.0);
                lo + 0.5 * (self.lr - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

fn check_n(op: &'static str, n: usize, others: &[usize]) -> Result<()> {
    if let Some(m) = others.iter().find(|&&m| m != n) {
        return Err(PifmError::dim(op, format!("{n} vs {m} nodes")));
    }
    Ok(())
}

/// Prior-informed source state. Hidden upper-triangle entries receive
/// `f_prior + ε`, `ε ~ N(0, σ²)`, mirrored to the lower triangle; observed
/// entries are copied from `a1`.
///
/// * link prediction: `ξ⊙A_1 + (1-ξ)⊙(f + ε)`
/// * expansion: `A^O + (1-A^O)⊙(f + ε)` with `A^O = ξ⊙A_1`
/// * denoising: `A^O⊙(f + ε)` with `A^O` the corrupted graph, whose 1-entries
///   are exactly the hidden pairs
///
/// The three coincide given how each task builds `ξ`, so `a1` may be the
/// clean graph (training) or the observation (sampling).
pub fn build_a0<R: Rng + ?Sized>(
    a1: &AdjacencyState,
    xi: &ObservationMask,
    prior_probs: &AdjacencyState,
    sigma_s: f64,
    task: TaskKind,
    rng: &mut R,
) -> Result<AdjacencyState> {
    let n = a1.n();
    check_n("build_a0", n, &[xi.n(), prior_probs.n()])?;
    if !(sigma_s >= 0.0) {
        return Err(PifmError::Config(format!("source noise {sigma_s} must be nonnegative")));
    }
    let noise = Normal::new(0.0, sigma_s).map_err(|e| PifmError::Config(e.to_string()))?;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let xij = if xi.is_observed(i, j) { 1.0 } else { 0.0 };
            let filled = if xij == 1.0 {
                0.0
            } else {
                let eps = if sigma_s > 0.0 { noise.sample(rng) } else { 0.0 };
                prior_probs.get(i, j) + eps
            };
            let v = match task {
                TaskKind::LinkPrediction => xij * a1.get(i, j) + (1.0 - xij) * filled,
                TaskKind::Expansion => {
                    let obs = xij * a1.get(i, j);
                    obs + (1.0 - obs) * filled
                }
                TaskKind::Denoising => (1.0 - xij) * filled,
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(AdjacencyState::from_matrix_unchecked(out))
}

/// `(1-t) a0 + t a1`, exact at both endpoints.
pub fn interpolate(a0: &AdjacencyState, a1: &AdjacencyState, t: f64) -> Result<AdjacencyState> {
    check_n("interpolate", a0.n(), &[a1.n()])?;
    if !(0.0..=1.0).contains(&t) {
        return Err(PifmError::Range(format!("interpolation time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(a0.clone());
    }
    if t == 1.0 {
        return Ok(a1.clone());
    }
    let m = a0.matrix().zip_map(a1.matrix(), |x, y| (1.0 - t) * x + t * y)?;
    Ok(AdjacencyState::from_matrix_unchecked(m))
}

/// One reconstruction draw.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub initial: AdjacencyState,
    pub trajectory: Option<Vec<AdjacencyState>>,
    pub final_state: AdjacencyState,
    pub k: usize,
    pub seed: u64,
}

/// Euler integration of the learned flow from a freshly drawn source state:
/// `Â ← Â + v(Â, i/K) / K` for `i = 0..K`. With `clamp_observed` the observed
/// entries of `a_obs` are re-imposed after every step.
#[allow(clippy::too_many_arguments)]
pub fn euler_sample<R: Rng + ?Sized>(
    net: &VelocityNet,
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    prior_probs: &AdjacencyState,
    task: TaskKind,
    k: usize,
    sigma_s: f64,
    clamp_observed: bool,
    keep_trajectory: bool,
    seed: u64,
    rng: &mut R,
) -> Result<FlowSample> {
    if k == 0 {
        return Err(PifmError::Config("K must be at least 1".into()));
    }
    let a0 = build_a0(a_obs, xi, prior_probs, sigma_s, task, rng)?;
    let mut trajectory = keep_trajectory.then(|| vec![a0.clone()]);
    let final_state = integrate(net, &a0, a_obs, xi, k, clamp_observed, |s| {
        if let Some(snaps) = trajectory.as_mut() {
            snaps.push(s.clone());
        }
    })?;
    Ok(FlowSample {
        initial: a0,
        trajectory,
        final_state,
        k,
        seed,
    })
}

/// Deterministic Euler integration from a given source state; `snapshot` sees
/// the state after every step.
pub fn integrate(
    net: &VelocityNet,
    a0: &AdjacencyState,
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    k: usize,
    clamp_observed: bool,
    mut snapshot: impl FnMut(&AdjacencyState),
) -> Result<AdjacencyState> {
    let n = a0.n();
    check_n("euler_sample", n, &[a_obs.n(), xi.n()])?;
    let mut state = a0.matrix().clone();
    let h = 1.0 / k as f64;
    for i in 0..k {
        let v = net.velocity(&state, i as f64 / k as f64)?;
        state.data_mut().iter_mut().zip(v.data()).for_each(|(s, dv)| *s += h * dv);
        if clamp_observed {
            for a in 0..n {
                for b in 0..n {
                    if a != b && xi.is_observed(a, b) {
                        state[(a, b)] = a_obs.get(a, b);
                    }
                }
            }
        }
        snapshot(&AdjacencyState::from_matrix_unchecked(state.clone()));
    }
    crate::graph::symmetrize_clip(&state, None)
}

/// Log-density of `a1` under the flow started from the Gaussian source
/// around `prior_probs`, by the instantaneous change of variables:
///
/// `log p(A_1) = log p(A_0) - ∫ tr ∂v(A_t, t)/∂A_t dt`
///
/// The base term sums `N(a0_ij; f_ij, σ²)` over hidden upper-triangle pairs.
/// The trace runs over upper-triangle coordinates (each perturbing both
/// symmetric entries) by central differences, and the time integral uses the
/// midpoint rule along the straight path from `a0` to `a1`.
pub fn log_density(
    net: &VelocityNet,
    a1: &AdjacencyState,
    a0: &AdjacencyState,
    xi: &ObservationMask,
    prior_probs: &AdjacencyState,
    quad_steps: usize,
    sigma_s: f64,
) -> Result<f64> {
    let n = a1.n();
    check_n("log_density", n, &[a0.n(), xi.n(), prior_probs.n()])?;
    if !(sigma_s > 0.0) {
        return Err(PifmError::Config("log-density needs a nondegenerate base (sigma > 0)".into()));
    }
    if quad_steps == 0 {
        return Err(PifmError::Config("quadrature needs at least one step".into()));
    }
    let mut base = 0.0;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_s * sigma_s).ln();
    for (i, j) in xi.hidden_pairs() {
        let z = (a0.get(i, j) - prior_probs.get(i, j)) / sigma_s;
        base += log_norm - 0.5 * z * z;
    }
    let mut divergence = 0.0;
    for q in 0..quad_steps {
        let t = (q as f64 + 0.5) / quad_steps as f64;
        let a_t = a0.matrix().zip_map(a1.matrix(), |x, y| (1.0 - t) * x + t * y)?;
        divergence += jacobian_trace(net, &a_t, t)? / quad_steps as f64;
    }
    Ok(base - divergence)
}

const FD_STEP: f64 = 1e-5;

/// `Σ_{i<j} ∂v_ij / ∂a_ij` by central differences.
pub fn jacobian_trace(net: &VelocityNet, a_t: &Matrix, t: f64) -> Result<f64> {
    let n = a_t.rows();
    let mut trace = 0.0;
    let mut work = a_t.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let orig = work[(i, j)];
            work[(i, j)] = orig + FD_STEP;
            work[(j, i)] = orig + FD_STEP;
            let plus = net.velocity(&work, t)?[(i, j)];
            work[(i, j)] = orig - FD_STEP;
            work[(j, i)] = orig - FD_STEP;
            let minus = net.velocity(&work, t)?[(i, j)];
            work[(i, j)] = orig;
            work[(j, i)] = orig;
            trace += (plus - minus) / (2.0 * FD_STEP);
        }
    }
    Ok(trace)
}

/// Mean squared error over hidden upper-triangle pairs.
pub fn mse_distortion(a_hat: &AdjacencyState, a1: &AdjacencyState, xi: &ObservationMask) -> Result<f64> {
    check_n("mse_distortion", a1.n(), &[a_hat.n(), xi.n()])?;
    let hidden = xi.hidden_pairs();
    if hidden.is_empty() {
        return Err(PifmError::UndefinedMetric("no hidden pairs to score".into()));
    }
    let s: f64 = hidden
        .iter()
        .map(|&(i, j)| (a_hat.get(i, j) - a1.get(i, j)).powi(2))
        .sum();
    Ok(s / hidden.len() as f64)
}

#[cfg(test)]
mod tests;
