use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::linalg::Matrix;
use crate::nn::sigmoid;

/// `n x d` node embedding matrix; row `i` belongs to node `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    values: Matrix,
}

impl NodeEmbeddings {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(PifmError::Range("embeddings contain non-finite values".into()));
        }
        Ok(NodeEmbeddings { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    /// `z_i ⊙ z_j`
    pub fn hadamard(&self, i: usize, j: usize) -> Vec<f64> {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).collect()
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            window: 5,
            dim: 64,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

const UNIGRAM_POWER: f64 = 0.75;

/// Skip-gram with negative sampling over node walks.
///
/// Each (center, context) pair within `window` positions is a positive; for
/// every positive `negatives` nodes are drawn from the unigram distribution
/// raised to 0.75. Plain SGD with a learning rate decaying linearly to zero.
/// Returns the input (center) vectors.
pub fn train_sgns<R: Rng + ?Sized>(
    walks: &[Vec<usize>],
    n_nodes: usize,
    cfg: &SgnsConfig,
    rng: &mut R,
) -> Result<NodeEmbeddings> {
    let d = cfg.dim;
    if d == 0 {
        return Err(PifmError::Config("embedding dimension must be positive".into()));
    }
    if walks.iter().flatten().any(|&v| v >= n_nodes) {
        return Err(PifmError::dim("train_sgns", format!("walk node outside 0..{n_nodes}")));
    }
    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|c| {
                    let lo = c.saturating_sub(cfg.window);
                    let hi = (c + cfg.window).min(w.len() - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    if pairs_per_epoch == 0 {
        return Err(PifmError::Training(
            "walk corpus has no co-occurrence pairs".into(),
        ));
    }

    let mut input = Matrix::from_fn(n_nodes, d, |_, _| (rng.random::<f64>() - 0.5) / d as f64);
    if cfg.epochs == 0 {
        return NodeEmbeddings::new(input);
    }
    let mut output = Matrix::zeros(n_nodes, d);

    let mut counts = vec![0.0; n_nodes];
    for &v in walks.iter().flatten() {
        counts[v] += 1.0;
    }
    let mut cdf: Vec<f64> = counts.iter().map(|c: &f64| c.powf(UNIGRAM_POWER)).collect();
    let total: f64 = cdf.iter().sum();
    let mut acc = 0.0;
    for x in cdf.iter_mut() {
        acc += *x / total;
        *x = acc;
    }
    let draw_negative = |rng: &mut R| -> usize {
        let u = rng.random::<f64>();
        cdf.partition_point(|&c| c <= u).min(n_nodes - 1)
    };

    let total_pairs = (pairs_per_epoch * cfg.epochs) as f64;
    let mut seen = 0.0;
    let mut grad_in = vec![0.0; d];
    for _ in 0..cfg.epochs {
        for w in walks {
            for c in 0..w.len() {
                let center = w[c];
                let lo = c.saturating_sub(cfg.window);
                let hi = (c + cfg.window).min(w.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == c {
                        continue;
                    }
                    let lr = (cfg.lr * (1.0 - seen / total_pairs)).max(cfg.lr * 1e-4);
                    seen += 1.0;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (w[ctx_pos], 1.0)
                        } else {
                            (draw_negative(rng), 0.0)
                        };
                        if k > 0 && target == w[ctx_pos] {
                            continue;
                        }
                        let zin = input.row(center);
                        let zout = output.row(target);
                        let dot: f64 = zin.iter().zip(zout).map(|(a, b)| a * b).sum();
                        let g = lr * (label - sigmoid(dot));
                        for (gi, &o) in grad_in.iter_mut().zip(zout) {
                            *gi += g * o;
                        }
                        let zin = input.row(center).to_vec();
                        for (o, a) in output.row_mut(target).iter_mut().zip(zin) {
                            *o += g * a;
                        }
                    }
                    for (x, g) in input.row_mut(center).iter_mut().zip(&grad_in) {
                        *x += g;
                    }
                }
            }
        }
    }
    NodeEmbeddings::new(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyState;
    use crate::priors::walks::random_walks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_cliques() -> AdjacencyState {
        let mut e = vec![];
        for base in [0, 5] {
            for i in 0..5 {
                for j in (i + 1)..5 {
                    e.push((base + i, base + j));
                }
            }
        }
        AdjacencyState::from_edges(10, &e).unwrap()
    }

    #[test]
    fn cliques_separate() {
        let a = two_cliques();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let walks = random_walks(&a, 10, 20, 1.0, 1.0, &mut rng);
            let cfg = SgnsConfig {
                dim: 16,
                epochs: 10,
                ..Default::default()
            };
            let z = train_sgns(&walks, 10, &cfg, &mut rng).unwrap();
            let (mut within, mut nw, mut cross, mut nc) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..10 {
                for j in (i + 1)..10 {
                    if (i < 5) == (j < 5) {
                        within += z.cosine(i, j);
                        nw += 1.0;
                    } else {
                        cross += z.cosine(i, j);
                        nc += 1.0;
                    }
                }
            }
            let gap = within / nw - cross / nc;
            assert!(gap > 0.1, "seed {seed}: similarity gap {gap}");
        }
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let walks = vec![vec![0, 1, 0, 1]];
        let cfg = SgnsConfig {
            dim: 4,
            epochs: 0,
            ..Default::default()
        };
        let z = train_sgns(&walks, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        // Same draws as the initializer.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let init = Matrix::from_fn(2, 4, |_, _| (rng.random::<f64>() - 0.5) / 4.0);
        assert_eq!(z.matrix(), &init);
    }

    #[test]
    fn deterministic_per_seed_and_degenerate_corpus() {
        let walks = vec![vec![0, 1, 2, 1, 0], vec![2, 1]];
        let cfg = SgnsConfig {
            dim: 8,
            ..Default::default()
        };
        let a = train_sgns(&walks, 3, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = train_sgns(&walks, 3, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let lonely = vec![vec![0], vec![1]];
        assert!(matches!(
            train_sgns(&lonely, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(PifmError::Training(_))
        ));
    }
}
