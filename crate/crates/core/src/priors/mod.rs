//! Edge-probability priors `f_prior`: a transductive node2vec prior refit on
//! every observed graph, an inductive message-passing prior, a histogram
//! graphon prior and a constant baseline.

mod canonical;
mod graphon;
mod logistic;
mod node2vec;
mod sage;
mod sgns;
mod walks;

use std::fmt;
use std::str::FromStr;

use serde_json::json;

use crate::data::GraphonGrid;
use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, ObservationMask};
use crate::linalg::Matrix;
use crate::nn::Checkpoint;

pub use canonical::{canonicalize, structural_embeddings};
pub use graphon::{estimate_histogram_graphon, GraphonPrior, SMOOTHING_RADIUS};
pub use logistic::{
    balanced_weights, fit_edge_classifier, fit_logistic, sample_observed_pairs, EdgeClassifierFit,
    EdgeLogisticModel, DEFAULT_L2,
};
pub use node2vec::{canonical_order, fit_probabilities, Node2VecConfig, Node2VecFit, Node2VecPrior};
pub use sage::{pair_probabilities, sage_embed, structural_features, train_sage, SageConfig, SageFit, SagePrior};
pub use sgns::{train_sgns, NodeEmbeddings, SgnsConfig};
pub use walks::random_walks;

/// Value the constant baseline assigns to hidden pairs.
pub const CONSTANT_PRIOR_VALUE: f64 = 0.5;
/// Source noise paired with the constant baseline.
pub const CONSTANT_PRIOR_SIGMA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[serde(rename = "node2vec")]
    Node2Vec,
    Sage,
    Graphon,
    Gaussian,
}

impl FromStr for PriorKind {
    type Err = PifmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "node2vec" => Ok(PriorKind::Node2Vec),
            "sage" | "graphsage" => Ok(PriorKind::Sage),
            "graphon" => Ok(PriorKind::Graphon),
            "gaussian" | "constant" => Ok(PriorKind::Gaussian),
            other => Err(PifmError::Config(format!(
                "unknown prior `{other}` (expected node2vec, sage, graphon or gaussian)"
            ))),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Node2Vec => "node2vec",
            PriorKind::Sage => "sage",
            PriorKind::Graphon => "graphon",
            PriorKind::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PriorModel {
    Node2Vec(Node2VecPrior),
    Sage(SagePrior),
    Graphon(GraphonPrior),
    Constant { value: f64 },
}

/// Prior probabilities plus whether the estimator had to fall back to a
/// density constant.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorOutput {
    pub probs: AdjacencyState,
    pub fallback: bool,
}

impl PriorModel {
    pub fn kind(&self) -> PriorKind {
        match self {
            PriorModel::Node2Vec(_) => PriorKind::Node2Vec,
            PriorModel::Sage(_) => PriorKind::Sage,
            PriorModel::Graphon(_) => PriorKind::Graphon,
            PriorModel::Constant { .. } => PriorKind::Gaussian,
        }
    }

    pub fn is_inductive(&self) -> bool {
        !matches!(self, PriorModel::Node2Vec(_))
    }

    /// Observed entries copied from `a_obs`, hidden ones filled by the model.
    pub fn predict(&self, a_obs: &AdjacencyState, xi: &ObservationMask) -> Result<PriorOutput> {
        let n = a_obs.n();
        if xi.n() != n {
            return Err(PifmError::dim("prior_predict", format!("graph of {n} with mask of {}", xi.n())));
        }
        if xi.hidden_count() == 0 {
            return Ok(PriorOutput {
                probs: a_obs.clone(),
                fallback: false,
            });
        }
        let (fill, fallback) = match self {
            PriorModel::Node2Vec(p) => {
                let fit = p.fit(a_obs, xi)?;
                (fit_probabilities(&fit), fit.fallback)
            }
            PriorModel::Sage(p) => {
                if p.params.is_empty() {
                    return Err(PifmError::State("inductive prior has no trained parameters".into()));
                }
                (p.edge_probabilities(a_obs)?, false)
            }
            PriorModel::Graphon(g) => (g.edge_probabilities(a_obs), false),
            PriorModel::Constant { value } => (Matrix::filled(n, n, *value), false),
        };
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if xi.is_observed(i, j) {
                    a_obs.get(i, j)
                } else {
                    let v = fill[(i, j)];
                    if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 }
                };
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(PriorOutput {
            probs: AdjacencyState::from_matrix(out)?,
            fallback,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(match self {
            PriorModel::Node2Vec(p) => {
                let mut ck = Checkpoint::new(
                    "prior/node2vec",
                    json!({ "config": p.config, "seed": p.seed }),
                );
                if let Some(h) = &p.shared_head {
                    ck.push("head/w", vec![h.weight.len()], h.weight.clone());
                    ck.push("head/b", vec![1], vec![h.bias]);
                    ck.metadata["l2"] = json!(h.l2);
                }
                ck
            }
            PriorModel::Sage(p) => {
                let mut ck = Checkpoint::new("prior/sage", json!({ "config": p.config }));
                ck.push_params("", &p.params);
                ck
            }
            PriorModel::Graphon(g) => {
                let r = g.grid.resolution();
                let mut ck = Checkpoint::new("prior/graphon", json!({ "resolution": r }));
                ck.push("grid", vec![r, r], g.grid.values().data().to_vec());
                ck
            }
            PriorModel::Constant { value } => Checkpoint::new("prior/gaussian", json!({ "value": value })),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = &ck.metadata;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| PifmError::State(format!("{} checkpoint lacks `{k}`", ck.kind)))
        };
        match ck.kind.as_str() {
            "prior/node2vec" => {
                let config: Node2VecConfig = serde_json::from_value(field("config")?)?;
                let seed = field("seed")?
                    .as_u64()
                    .ok_or_else(|| PifmError::State("node2vec seed is not an integer".into()))?;
                let shared_head = match (ck.record("head/w"), ck.record("head/b")) {
                    (Some((_, w)), Some((_, b))) => Some(EdgeLogisticModel {
                        weight: w.to_vec(),
                        bias: b[0],
                        l2: meta.get("l2").and_then(|v| v.as_f64()).unwrap_or(0.0),
                    }),
                    _ => None,
                };
                Ok(PriorModel::Node2Vec(Node2VecPrior {
                    config,
                    seed,
                    shared_head,
                }))
            }
            "prior/sage" => Ok(PriorModel::Sage(SagePrior {
                config: serde_json::from_value(field("config")?)?,
                params: ck.params("")?,
            })),
            "prior/graphon" => {
                let (shape, data) = ck
                    .record("grid")
                    .ok_or_else(|| PifmError::State("graphon checkpoint lacks its grid".into()))?;
                if shape.len() != 2 {
                    return Err(PifmError::State(format!("graphon grid has shape {shape:?}")));
                }
                let grid = GraphonGrid::new(Matrix::from_vec(shape[0], shape[1], data.to_vec())?)?;
                Ok(PriorModel::Graphon(GraphonPrior::new(grid)))
            }
            "prior/gaussian" => Ok(PriorModel::Constant {
                value: field("value")?
                    .as_f64()
                    .ok_or_else(|| PifmError::State("constant prior value is not a number".into()))?,
            }),
            other => Err(PifmError::State(format!("`{other}` is not a prior checkpoint"))),
        }
    }
}

/// Free-function form of [`PriorModel::predict`] returning only the
/// probabilities.
pub fn prior_predict(model: &PriorModel, a_obs: &AdjacencyState, xi: &ObservationMask) -> Result<AdjacencyState> {
    Ok(model.predict(a_obs, xi)?.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{permute, GraphRecord, NodePermutation};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, rng: &mut ChaCha8Rng) -> (AdjacencyState, ObservationMask) {
        let mut e = vec![];
        let mut hidden = vec![];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.3 {
                    hidden.push((i, j));
                } else if rng.random::<f64>() < 0.4 {
                    e.push((i, j));
                }
            }
        }
        (
            AdjacencyState::from_edges(n, &e).unwrap(),
            ObservationMask::from_hidden_pairs(n, &hidden).unwrap(),
        )
    }

    fn inductive_models() -> Vec<PriorModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = GraphonGrid::from_fn(16, |x, y| 0.2 + 0.6 * x * y).unwrap();
        let graphs: Vec<GraphRecord> = (0..20)
            .map(|k| crate::data::sample_graphon_graph(&w, 10, k, &mut rng).unwrap())
            .collect();
        vec![
            PriorModel::Sage(SagePrior::init(SageConfig::default(), 1).unwrap()),
            PriorModel::Graphon(estimate_histogram_graphon(&graphs, 16).unwrap()),
            PriorModel::Constant { value: 0.5 },
        ]
    }

    #[test]
    fn kind_names_match_the_command_line() {
        for kind in [PriorKind::Node2Vec, PriorKind::Sage, PriorKind::Graphon, PriorKind::Gaussian] {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{kind}\""));
            assert_eq!(kind.to_string().parse::<PriorKind>().unwrap(), kind);
            assert_eq!(serde_json::from_str::<PriorKind>(&json).unwrap(), kind);
        }
    }

    #[test]
    fn fully_observed_returns_observation() {
        let a = AdjacencyState::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        for m in inductive_models() {
            assert_eq!(prior_predict(&m, &a, &ObservationMask::all_observed(4)).unwrap(), a);
        }
    }

    #[test]
    fn constant_graphon_fills_constant() {
        let m = PriorModel::Graphon(GraphonPrior::new(GraphonGrid::constant(8, 0.3).unwrap()));
        let a = AdjacencyState::from_edges(5, &[(0, 1), (1, 2)]).unwrap();
        let xi = ObservationMask::from_hidden_pairs(5, &[(0, 4), (2, 3), (1, 2)]).unwrap();
        let p = prior_predict(&m, &a, &xi).unwrap();
        for (i, j) in xi.hidden_pairs() {
            assert_eq!(p.get(i, j), 0.3);
        }
        assert_eq!(p.get(0, 1), 1.0);
    }

    #[test]
    fn untrained_sage_is_a_state_error() {
        let m = PriorModel::Sage(SagePrior {
            config: SageConfig::default(),
            params: Default::default(),
        });
        let a = AdjacencyState::empty(3);
        let xi = ObservationMask::all_hidden(3);
        assert!(matches!(m.predict(&a, &xi), Err(PifmError::State(_))));
    }

    #[test]
    fn inductive_priors_are_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let models = inductive_models();
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let (a, xi) = random_instance(n, &mut rng);
            let p = NodePermutation::random(n, &mut rng);
            for m in &models {
                let base = prior_predict(m, &a, &xi).unwrap();
                let moved = prior_predict(m, &permute(&a, &p).unwrap(), &xi.permute(&p).unwrap()).unwrap();
                let expect = permute(&base, &p).unwrap();
                assert!(expect.matrix().max_abs_diff(moved.matrix()) <= 1e-8);
            }
        }
    }

    #[test]
    fn hidden_entries_depend_only_on_pair_embeddings() {
        let m = &inductive_models()[0];
        let PriorModel::Sage(s) = m else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, xi) = random_instance(9, &mut rng);
        let p = prior_predict(m, &a, &xi).unwrap();
        let z = s.embed(&a).unwrap();
        let w = s.params.get("head/w").unwrap().data.clone();
        let b = s.params.get("head/b").unwrap().data[0];
        for (i, j) in xi.hidden_pairs() {
            let logit: f64 = (0..z.dim()).map(|k| z.row(i)[k] * z.row(j)[k] * w[k]).sum::<f64>() + b;
            assert!((p.get(i, j) - crate::nn::sigmoid(logit)).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut models = inductive_models();
        let mut n2v = Node2VecPrior::new(Node2VecConfig::default(), 4);
        n2v.shared_head = Some(EdgeLogisticModel::constant(0.6, 64));
        models.push(PriorModel::Node2Vec(n2v));
        for m in models {
            let mut buf = vec![];
            m.to_checkpoint().unwrap().write_to(&mut buf).unwrap();
            let back = PriorModel::from_checkpoint(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn outputs_are_valid_probabilities(seed in 0u64..1000, n in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, xi) = random_instance(n, &mut rng);
            let mut models = inductive_models();
            models.push(PriorModel::Node2Vec(Node2VecPrior::new(
                Node2VecConfig { sgns: SgnsConfig { dim: 4, epochs: 1, ..Default::default() }, ..Default::default() },
                seed,
            )));
            for m in &models {
                let p = prior_predict(m, &a, &xi).unwrap();
                for i in 0..n {
                    prop_assert_eq!(p.get(i, i), 0.0);
                    for j in 0..n {
                        prop_assert_eq!(p.get(i, j), p.get(j, i));
                        prop_assert!((0.0..=1.0).contains(&p.get(i, j)));
                        if i != j && xi.is_observed(i, j) {
                            prop_assert_eq!(p.get(i, j), a.get(i, j));
                        }
                    }
                }
            }
        }
    }
}
