use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::graph::{permute, AdjacencyState, NodePermutation, ObservationMask};
use crate::linalg::Matrix;
use crate::priors::canonical::{canonicalize, structural_embeddings};
use crate::priors::logistic::{fit_edge_classifier, fit_logistic, EdgeLogisticModel, DEFAULT_L2};
use crate::priors::sgns::{train_sgns, NodeEmbeddings, SgnsConfig};
use crate::priors::walks::random_walks;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Node2VecConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub p: f64,
    pub q: f64,
    pub sgns: SgnsConfig,
    pub neg_ratio: usize,
    pub l2: f64,
}

impl Default for Node2VecConfig {
    fn default() -> Self {
        Node2VecConfig {
            walks_per_node: 10,
            walk_length: 20,
            p: 1.0,
            q: 1.0,
            sgns: SgnsConfig::default(),
            neg_ratio: 5,
            l2: DEFAULT_L2,
        }
    }
}

/// Transductive prior: embeddings and classifier are refit on every observed
/// graph. A `shared_head`, when present, replaces the per-instance classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node2VecPrior {
    pub config: Node2VecConfig,
    pub seed: u64,
    pub shared_head: Option<EdgeLogisticModel>,
}

/// Result of fitting one observed graph. Embedding row `i` is node `i` of the
/// caller's labeling.
#[derive(Clone, Debug, PartialEq)]
pub struct Node2VecFit {
    pub embeddings: NodeEmbeddings,
    pub classifier: EdgeLogisticModel,
    pub fallback: bool,
}

impl Node2VecPrior {
    pub fn new(config: Node2VecConfig, seed: u64) -> Self {
        Node2VecPrior {
            config,
            seed,
            shared_head: None,
        }
    }

    /// Embeds `a_obs`. Nodes are first relabeled into a canonical order from
    /// structural descriptors and all randomness is seeded in that order, so
    /// relabeled inputs give relabeled embeddings unless nodes tie.
    pub fn embed(&self, a_obs: &AdjacencyState) -> Result<Option<NodeEmbeddings>> {
        let order = canonicalize(&structural_embeddings(a_obs), &a_obs.degrees())?;
        let canon = permute(a_obs, &order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = &self.config;
        let walks = random_walks(&canon, c.walks_per_node, c.walk_length, c.p, c.q, &mut rng);
        let emb = match train_sgns(&walks, canon.n(), &c.sgns, &mut rng) {
            Ok(e) => e,
            Err(PifmError::Training(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        // Row order.apply(i) of the canonical embeddings belongs to node i.
        let back = order.inverse().permute_rows(emb.matrix())?;
        Ok(Some(NodeEmbeddings::new(back)?))
    }

    pub fn fit(&self, a_obs: &AdjacencyState, xi: &ObservationMask) -> Result<Node2VecFit> {
        let dim = self.config.sgns.dim;
        let Some(emb) = self.embed(a_obs)? else {
            // No walk moved: nothing to embed, fall back to observed density.
            let observed = xi.observed_pairs();
            let edges = observed.iter().filter(|&&(i, j)| a_obs.get(i, j) == 1.0).count();
            let density = (edges as f64 + 0.5) / (observed.len() as f64 + 1.0);
            return Ok(Node2VecFit {
                embeddings: NodeEmbeddings::new(Matrix::zeros(a_obs.n(), dim))?,
                classifier: self
                    .shared_head
                    .clone()
                    .unwrap_or_else(|| EdgeLogisticModel::constant(density, dim)),
                fallback: self.shared_head.is_none(),
            });
        };
        if let Some(head) = &self.shared_head {
            return Ok(Node2VecFit {
                embeddings: emb,
                classifier: head.clone(),
                fallback: false,
            });
        }
        let order = canonicalize(&structural_embeddings(a_obs), &a_obs.degrees())?;
        let canon_emb = NodeEmbeddings::new(order.permute_rows(emb.matrix())?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xc1a5);
        let fit = fit_edge_classifier(
            &canon_emb,
            &permute(a_obs, &order)?,
            &xi.permute(&order)?,
            self.config.neg_ratio,
            self.config.l2,
            &mut rng,
        )?;
        Ok(Node2VecFit {
            embeddings: emb,
            classifier: fit.model,
            fallback: fit.fallback,
        })
    }

    /// Unbalanced logistic fit of a head shared by all instances, on the
    /// hidden pairs of each instance labeled by its clean graph. Useful when
    /// all instances share one observed topology, so per-instance fits see the
    /// same pairs but the pooled labels carry the hidden-pair frequencies.
    pub fn fit_shared_head(&mut self, instances: &[(AdjacencyState, ObservationMask, AdjacencyState)]) -> Result<()> {
        let (mut feats, mut labels) = (vec![], vec![]);
        for (a_obs, xi, truth) in instances {
            let Some(emb) = self.embed(a_obs)? else { continue };
            for (i, j) in xi.hidden_pairs() {
                feats.push(emb.hadamard(i, j));
                labels.push(truth.get(i, j));
            }
        }
        if feats.is_empty() {
            return Err(PifmError::Training("no embeddable instance for the shared head".into()));
        }
        let weights = vec![1.0; labels.len()];
        self.shared_head = Some(fit_logistic(&feats, &labels, &weights, self.config.l2)?);
        Ok(())
    }
}

/// Probability matrix for every pair under a fitted instance.
pub fn fit_probabilities(fit: &Node2VecFit) -> Matrix {
    let n = fit.embeddings.n();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = fit.classifier.predict_pair(&fit.embeddings, i, j);
            out[(i, j)] = p;
            out[(j, i)] = p;
        }
    }
    out
}

/// Relabeling helper for tests of the canonical-order property.
pub fn canonical_order(a_obs: &AdjacencyState) -> Result<NodePermutation> {
    canonicalize(&structural_embeddings(a_obs), &a_obs.degrees())
}
