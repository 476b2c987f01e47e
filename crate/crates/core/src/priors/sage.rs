use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_task_input, TaskKind, TaskSpec};
use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, GraphRecord, ObservationMask};
use crate::linalg::Matrix;
use crate::nn::{adam_step, sigmoid, AdamState, GradientMap, ParameterSet, Tape, Var};
use crate::par;
use crate::priors::logistic::{balanced_weights, sample_observed_pairs};
use crate::priors::sgns::NodeEmbeddings;

pub const INPUT_FEATURES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    pub depth: usize,
    pub hidden: usize,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub neg_ratio: usize,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            depth: 2,
            hidden: 32,
            dim: 32,
            epochs: 30,
            batch_size: 16,
            lr: 1e-2,
            neg_ratio: 5,
        }
    }
}

/// Mean-aggregator message passing over structural node features, followed
/// by a shared logistic head on Hadamard pair features.
#[derive(Clone, Debug, PartialEq)]
pub struct SagePrior {
    pub config: SageConfig,
    pub params: ParameterSet,
}

/// `[deg / (n-1), ln(1 + deg)]` per node.
pub fn structural_features(a: &AdjacencyState) -> Matrix {
    let n = a.n();
    let deg = a.degrees();
    let norm = (n.max(2) - 1) as f64;
    Matrix::from_fn(n, INPUT_FEATURES, |i, k| match k {
        0 => deg[i] / norm,
        _ => deg[i].ln_1p(),
    })
}

/// Row-normalized adjacency `D^-1 A`; isolated nodes get a zero row.
fn mean_aggregator(a: &AdjacencyState) -> Matrix {
    let n = a.n();
    let deg = a.degrees();
    Matrix::from_fn(n, n, |i, j| if deg[i] > 0.0 { a.get(i, j) / deg[i] } else { 0.0 })
}

impl SagePrior {
    pub fn init(config: SageConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let mut width = INPUT_FEATURES;
        for l in 0..config.depth {
            params.init_glorot(&format!("layer{l}/w_self"), width, config.hidden, &mut rng)?;
            params.init_glorot(&format!("layer{l}/w_nbr"), width, config.hidden, &mut rng)?;
            params.init_const(&format!("layer{l}/b"), 1, config.hidden, 0.0)?;
            width = config.hidden;
        }
        params.init_glorot("out/w", width, config.dim, &mut rng)?;
        params.init_const("out/b", 1, config.dim, 0.0)?;
        params.init_glorot("head/w", config.dim, 1, &mut rng)?;
        params.init_const("head/b", 1, 1, 0.0)?;
        Ok(SagePrior { config, params })
    }

    fn embed_on_tape(&self, tape: &mut Tape, a: &AdjacencyState) -> Result<Var> {
        let mut h = tape.constant(structural_features(a));
        let agg = tape.constant(mean_aggregator(a));
        for l in 0..self.config.depth {
            let ws = tape.param(&self.params, &format!("layer{l}/w_self"))?;
            let wn = tape.param(&self.params, &format!("layer{l}/w_nbr"))?;
            let b = tape.param(&self.params, &format!("layer{l}/b"))?;
            let own = tape.linear(h, ws, b)?;
            let nb = tape.matmul(agg, h)?;
            let nb = tape.matmul(nb, wn)?;
            let s = tape.add(own, nb)?;
            h = tape.silu(s);
        }
        let w = tape.param(&self.params, "out/w")?;
        let b = tape.param(&self.params, "out/b")?;
        tape.linear(h, w, b)
    }

    fn logits_on_tape(&self, tape: &mut Tape, z: Var, pairs: Vec<(usize, usize)>) -> Result<Var> {
        let x = tape.pair_hadamard(z, pairs)?;
        let w = tape.param(&self.params, "head/w")?;
        let b = tape.param(&self.params, "head/b")?;
        tape.linear(x, w, b)
    }

    pub fn embed(&self, a: &AdjacencyState) -> Result<NodeEmbeddings> {
        let mut tape = Tape::new();
        let z = self.embed_on_tape(&mut tape, a)?;
        NodeEmbeddings::new(tape.value(z).clone())
    }

    /// Edge probability for every pair; zero diagonal.
    pub fn edge_probabilities(&self, a_obs: &AdjacencyState) -> Result<Matrix> {
        let z = self.embed(a_obs)?;
        let w = self.params.get("head/w")?.data.clone();
        let b = self.params.get("head/b")?.data[0];
        Ok(pair_probabilities(&z, &w, b))
    }
}

/// `sigmoid(w · (z_i ⊙ z_j) + b)` for all `i != j`.
pub fn pair_probabilities(z: &NodeEmbeddings, w: &[f64], b: f64) -> Matrix {
    let n = z.n();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = z.row(i).iter().zip(z.row(j)).zip(w).map(|((a, c), w)| a * c * w).sum();
            let p = sigmoid(s + b);
            out[(i, j)] = p;
            out[(j, i)] = p;
        }
    }
    out
}

/// Supervised pairs for one training instance. Link prediction uses observed
/// pairs (positives plus `neg_ratio` negatives each); expansion and
/// denoising observe no usable negatives or positives, so their hidden pairs
/// are labeled from the clean training graph.
fn training_pairs(
    g: &GraphRecord,
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    kind: TaskKind,
    neg_ratio: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    match kind {
        TaskKind::LinkPrediction => sample_observed_pairs(a_obs, xi, neg_ratio, rng),
        TaskKind::Expansion | TaskKind::Denoising => {
            let pairs = xi.hidden_pairs();
            let labels = pairs.iter().map(|&(i, j)| g.adjacency().get(i, j)).collect();
            (pairs, labels)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SageFit {
    pub prior: SagePrior,
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains the shared message-passing weights and logistic head on fresh task
/// instances of the training graphs with the class-balanced logistic loss.
pub fn train_sage(train: &[GraphRecord], task: &TaskSpec, config: &SageConfig, seed: u64) -> Result<SageFit> {
    if train.is_empty() {
        return Err(PifmError::Config("inductive prior needs a nonempty training set".into()));
    }
    let mut prior = SagePrior::init(config.clone(), seed)?;
    let mut adam = AdamState::new(config.lr);
    let mut warnings = Vec::new();
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a6e);
    let batch = config.batch_size.max(1);

    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_graphs = 0usize;
        for chunk in order.chunks(batch) {
            let results = par::map(chunk, |_, &gi| -> Result<Option<(f64, GradientMap)>> {
                let g = &train[gi];
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((epoch as u64) << 32) | gi as u64);
                let (a_obs, xi) = match make_task_input(g, task, &mut rng) {
                    Ok(x) => x,
                    Err(PifmError::Config(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let (pairs, labels) = training_pairs(g, &a_obs, &xi, task.kind, config.neg_ratio, &mut rng);
                let pos = labels.iter().filter(|&&l| l == 1.0).count();
                if pos == 0 || pos == labels.len() {
                    return Ok(None);
                }
                let weights = balanced_weights(&labels);
                let mut tape = Tape::new();
                let z = prior.embed_on_tape(&mut tape, &a_obs)?;
                let logits = prior.logits_on_tape(&mut tape, z, pairs)?;
                let loss = tape.weighted_bce(logits, labels, weights)?;
                tape.backward(loss)?;
                Ok(Some((tape.scalar(loss), tape.param_grads())))
            });
            let mut total = GradientMap::default();
            let mut used = 0usize;
            for (r, &gi) in results.into_iter().zip(chunk) {
                match r? {
                    Some((l, g)) => {
                        epoch_loss += l;
                        used += 1;
                        total.add_assign(&g);
                    }
                    None if epoch == 0 => {
                        warnings.push(format!("graph {} skipped: no usable labeled pairs", train[gi].graph_id))
                    }
                    None => {}
                }
            }
            if used == 0 {
                continue;
            }
            epoch_graphs += used;
            total.scale(1.0 / used as f64);
            total.apply_to(&mut prior.params)?;
            adam_step(&mut prior.params, &mut adam)?;
        }
        if epoch_graphs == 0 {
            return Err(PifmError::Training("no training graph produced labeled pairs".into()));
        }
        let mean = epoch_loss / epoch_graphs as f64;
        if !mean.is_finite() {
            return Err(PifmError::Training(format!("inductive prior loss diverged at epoch {epoch}")));
        }
        loss_history.push(mean);
    }
    Ok(SageFit {
        prior,
        loss_history,
        warnings,
    })
}

/// Trains the inductive prior and returns it with the embeddings of each
/// training graph's own (unmasked) topology.
pub fn sage_embed(
    train: &[GraphRecord],
    task: &TaskSpec,
    config: &SageConfig,
    seed: u64,
) -> Result<(SagePrior, Vec<NodeEmbeddings>)> {
    let fit = train_sage(train, task, config, seed)?;
    let embs = train
        .iter()
        .map(|g| fit.prior.embed(g.adjacency()))
        .collect::<Result<Vec<_>>>()?;
    Ok((fit.prior, embs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_graphon_graph, GraphonFamily};
    use crate::graph::{permute, NodePermutation};
    use crate::metrics::auc;
    use rand::Rng;

    #[test]
    fn depth_zero_is_a_linear_map_of_features() {
        let cfg = SageConfig {
            depth: 0,
            dim: 3,
            ..Default::default()
        };
        let prior = SagePrior::init(cfg, 1).unwrap();
        let a = AdjacencyState::from_edges(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let z = prior.embed(&a).unwrap();
        let x = structural_features(&a);
        let expect = x.matmul(&prior.params.matrix("out/w").unwrap()).unwrap();
        assert!(z.matrix().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn embeddings_are_equivariant() {
        let prior = SagePrior::init(SageConfig::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.random_range(2..12);
            let mut e = vec![];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < 0.3 {
                        e.push((i, j));
                    }
                }
            }
            let a = AdjacencyState::from_edges(n, &e).unwrap();
            let p = NodePermutation::random(n, &mut rng);
            let z = prior.embed(&a).unwrap();
            let pz = prior.embed(&permute(&a, &p).unwrap()).unwrap();
            assert!(p.permute_rows(z.matrix()).unwrap().max_abs_diff(pz.matrix()) <= 1e-8);
        }
    }

    #[test]
    fn two_block_training_beats_chance_on_held_out_pairs() {
        let w = GraphonFamily::TwoBlock {
            p_in: 0.5,
            p_out: 0.1,
            split: 0.5,
        }
        .grid(64)
        .unwrap();
        let task = TaskSpec::new(TaskKind::LinkPrediction, 0.3, 5).unwrap();
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let graphs: Vec<GraphRecord> = (0..40)
                .map(|k| sample_graphon_graph(&w, 20, k, &mut rng).unwrap())
                .collect();
            let cfg = SageConfig {
                epochs: 10,
                ..Default::default()
            };
            let fit = train_sage(&graphs[..30], &task, &cfg, seed).unwrap();
            let (mut scores, mut labels) = (vec![], vec![]);
            for g in &graphs[30..] {
                let (a_obs, xi) = make_task_input(g, &task, &mut task.rng_for(g.graph_id, 99)).unwrap();
                let p = fit.prior.edge_probabilities(&a_obs).unwrap();
                let (pairs, l) = sample_observed_pairs(&a_obs, &xi, 5, &mut rng);
                scores.extend(pairs.iter().map(|&(i, j)| p[(i, j)]));
                labels.extend(l);
            }
            let v = auc(&scores, &labels).unwrap();
            assert!(v > 0.55, "seed {seed}: held-out observed-pair AUC {v}");
        }
    }
}
