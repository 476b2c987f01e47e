use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, ObservationMask};
use crate::nn::sigmoid;
use crate::priors::sgns::NodeEmbeddings;

pub const DEFAULT_L2: f64 = 1e-3;
const TOL: f64 = 1e-6;
const MAX_ITER: usize = 200;

/// `p(edge) = sigmoid(w · (z_i ⊙ z_j) + b)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLogisticModel {
    pub weight: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

impl EdgeLogisticModel {
    pub fn zeros(dim: usize, l2: f64) -> Self {
        EdgeLogisticModel {
            weight: vec![0.0; dim],
            bias: 0.0,
            l2,
        }
    }

    pub fn constant(p: f64, dim: usize) -> Self {
        let p = p.clamp(1e-6, 1.0 - 1e-6);
        EdgeLogisticModel {
            weight: vec![0.0; dim],
            bias: (p / (1.0 - p)).ln(),
            l2: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict_pair(&self, z: &NodeEmbeddings, i: usize, j: usize) -> f64 {
        self.predict(&z.hadamard(i, j))
    }
}

/// Weighted L2-regularized logistic regression, fitted by damped Newton
/// iterations until the step falls below 1e-6 (max 200 iterations). The
/// penalty `l2/2 ‖w‖²` skips the bias. Labels must be 0/1.
pub fn fit_logistic(
    features: &[Vec<f64>],
    labels: &[f64],
    weights: &[f64],
    l2: f64,
) -> Result<EdgeLogisticModel> {
    let m = features.len();
    if m == 0 || labels.len() != m || weights.len() != m {
        return Err(PifmError::dim(
            "fit_logistic",
            format!("{m} rows, {} labels, {} weights", labels.len(), weights.len()),
        ));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(PifmError::dim("fit_logistic", "ragged feature rows"));
    }
    let wsum: f64 = weights.iter().sum();
    let p = d + 1;
    let mut theta = vec![0.0; p];
    let objective = |theta: &[f64]| -> f64 {
        let mut s = 0.0;
        for k in 0..m {
            let z: f64 = features[k].iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
            let sp = if z > 30.0 { z } else { z.exp().ln_1p() };
            s += weights[k] * (sp - labels[k] * z);
        }
        s / wsum + 0.5 * l2 * theta[..d].iter().map(|x| x * x).sum::<f64>()
    };
    let mut f = objective(&theta);
    for _ in 0..MAX_ITER {
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for k in 0..m {
            let x = &features[k];
            let z: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + theta[d];
            let s = sigmoid(z);
            let w = weights[k] / wsum;
            let r = w * (s - labels[k]);
            let h = w * s * (1.0 - s);
            for a in 0..p {
                let xa = if a < d { x[a] } else { 1.0 };
                grad[a] += r * xa;
                for b in a..p {
                    let xb = if b < d { x[b] } else { 1.0 };
                    hess[a * p + b] += h * xa * xb;
                }
            }
        }
        for a in 0..d {
            grad[a] += l2 * theta[a];
            hess[a * p + a] += l2;
        }
        for a in 0..p {
            hess[a * p + a] += 1e-10;
            for b in 0..a {
                hess[a * p + b] = hess[b * p + a];
            }
        }
        let step = cholesky_solve(&hess, &grad, p)?;
        // Backtracking keeps the objective monotone on separable data.
        let mut t = 1.0;
        let mut next;
        loop {
            next = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect::<Vec<_>>();
            let fn_ = objective(&next);
            if fn_ <= f + 1e-12 || t < 1e-8 {
                f = fn_;
                break;
            }
            t *= 0.5;
        }
        let moved = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
        theta = next;
        if moved < TOL {
            break;
        }
    }
    Ok(EdgeLogisticModel {
        weight: theta[..d].to_vec(),
        bias: theta[d],
        l2,
    })
}

fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(PifmError::Training("logistic Hessian not positive definite".into()));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Class weights giving both classes equal total weight.
pub fn balanced_weights(labels: &[f64]) -> Vec<f64> {
    let pos = labels.iter().filter(|&&l| l == 1.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    let total = labels.len() as f64;
    labels
        .iter()
        .map(|&l| {
            if l == 1.0 {
                total / (2.0 * pos)
            } else {
                total / (2.0 * neg)
            }
        })
        .collect()
}

/// Observed positive pairs plus up to `neg_ratio` observed negatives per
/// positive, sampled without replacement. Returns (pairs, labels).
pub fn sample_observed_pairs<R: Rng + ?Sized>(
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    neg_ratio: usize,
    rng: &mut R,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let observed = xi.observed_pairs();
    let pos: Vec<(usize, usize)> = observed.iter().copied().filter(|&(i, j)| a_obs.get(i, j) == 1.0).collect();
    let mut neg: Vec<(usize, usize)> = observed.iter().copied().filter(|&(i, j)| a_obs.get(i, j) == 0.0).collect();
    neg.shuffle(rng);
    neg.truncate((neg_ratio * pos.len()).max(1).min(neg.len()));
    neg.sort_unstable();
    let mut labels = vec![1.0; pos.len()];
    labels.extend(std::iter::repeat_n(0.0, neg.len()));
    let mut pairs = pos;
    pairs.extend(neg);
    (pairs, labels)
}

/// Outcome of [`fit_edge_classifier`]. `fallback` is set when the observed
/// pairs held a single class and a constant density model was returned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeClassifierFit {
    pub model: EdgeLogisticModel,
    pub fallback: bool,
}

/// Class-balanced logistic regression on Hadamard features of observed pairs.
pub fn fit_edge_classifier<R: Rng + ?Sized>(
    emb: &NodeEmbeddings,
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    neg_ratio: usize,
    l2: f64,
    rng: &mut R,
) -> Result<EdgeClassifierFit> {
    if emb.n() != a_obs.n() || a_obs.n() != xi.n() {
        return Err(PifmError::dim(
            "fit_edge_classifier",
            format!("{} embeddings, {} nodes, mask of {}", emb.n(), a_obs.n(), xi.n()),
        ));
    }
    let (pairs, labels) = sample_observed_pairs(a_obs, xi, neg_ratio, rng);
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    if pos == 0 || pos == labels.len() {
        // Smoothed density of edges among observed pairs.
        let observed = xi.observed_pairs();
        let edges = observed.iter().filter(|&&(i, j)| a_obs.get(i, j) == 1.0).count();
        let density = (edges as f64 + 0.5) / (observed.len() as f64 + 1.0);
        return Ok(EdgeClassifierFit {
            model: EdgeLogisticModel::constant(density, emb.dim()),
            fallback: true,
        });
    }
    let features: Vec<Vec<f64>> = pairs.iter().map(|&(i, j)| emb.hadamard(i, j)).collect();
    let weights = balanced_weights(&labels);
    Ok(EdgeClassifierFit {
        model: fit_logistic(&features, &labels, &weights, l2)?,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_features_are_fit_perfectly() {
        let feats: Vec<Vec<f64>> = (0..40).map(|k| vec![k as f64 / 10.0 - 2.0, 1.0]).collect();
        let labels: Vec<f64> = feats.iter().map(|f| if f[0] > 0.05 { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; 40];
        let m = fit_logistic(&feats, &labels, &w, 1e-4).unwrap();
        let acc = feats
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| (m.predict(f) >= 0.5) == (l == 1.0))
            .count();
        assert_eq!(acc, 40);
    }

    #[test]
    fn zero_model_predicts_sigmoid_bias() {
        let m = EdgeLogisticModel::zeros(3, 0.0);
        assert_eq!(m.predict(&[0.3, -1.0, 8.0]), 0.5);
        let c = EdgeLogisticModel::constant(0.2, 3);
        assert!((c.predict(&[1.0, 2.0, 3.0]) - 0.2).abs() < 1e-12);
    }

    /// Coarse-to-fine grid search on the same objective, independent of the
    /// Newton solver.
    fn grid_fit(f: &[Vec<f64>], y: &[f64], l2: f64) -> [f64; 3] {
        let obj = |t: [f64; 3]| -> f64 {
            let mut s = 0.0;
            for (x, &l) in f.iter().zip(y) {
                let z = t[0] * x[0] + t[1] * x[1] + t[2];
                s += z.exp().ln_1p() - l * z;
            }
            s / f.len() as f64 + 0.5 * l2 * (t[0] * t[0] + t[1] * t[1])
        };
        let mut best = [0.0; 3];
        let mut step = 0.5;
        let mut radius = 10;
        while step > 2e-5 {
            let centre = best;
            let mut best_v = obj(best);
            for a in -radius..=radius {
                for b in -radius..=radius {
                    for c in -radius..=radius {
                        let t = [
                            centre[0] + a as f64 * step,
                            centre[1] + b as f64 * step,
                            centre[2] + c as f64 * step,
                        ];
                        let v = obj(t);
                        if v < best_v {
                            best_v = v;
                            best = t;
                        }
                    }
                }
            }
            if best == centre {
                step /= 4.0;
                radius = 4;
            }
        }
        best
    }

    #[test]
    fn newton_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let feats: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect();
        let labels: Vec<f64> = feats
            .iter()
            .map(|x| {
                let p = sigmoid(1.5 * x[0] - 2.0 * x[1] + 0.3);
                if rng.random::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let l2 = 0.05;
        let m = fit_logistic(&feats, &labels, &vec![1.0; 60], l2).unwrap();
        let g = grid_fit(&feats, &labels, l2);
        for (a, b) in [m.weight[0], m.weight[1], m.bias].iter().zip(g) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn single_class_falls_back_to_density() {
        let emb = NodeEmbeddings::new(Matrix::filled(4, 2, 0.1)).unwrap();
        // Expansion-like input: every observed pair is an edge.
        let a = AdjacencyState::from_edges(4, &[(0, 1)]).unwrap();
        let mut m = a.matrix().clone();
        for i in 0..4 {
            m[(i, i)] = 1.0;
        }
        let xi = ObservationMask::from_matrix(m).unwrap();
        let fit = fit_edge_classifier(&emb, &a, &xi, 1, DEFAULT_L2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(fit.fallback);
        assert!((fit.model.predict(&[0.0, 0.0]) - 0.75).abs() < 1e-9);
    }

    #[test]
    fn balanced_weights_equalize_classes() {
        let w = balanced_weights(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(w[0], 2.0);
        assert!((w[1] * 3.0 - 2.0).abs() < 1e-12);
    }
}
