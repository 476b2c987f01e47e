//! Browser demo: train a small flow on two-block graphs and reconstruct a
//! freshly masked graph, comparing the graphon prior with flow samples.

use pifm::data::{make_task_input, GraphonFamily, SyntheticSpec, TaskKind, TaskSpec};
use pifm::flow::{euler_sample, FixedInstance, FlowConfig, FlowTrainer, NetConfig};
use pifm::graph::{hidden_entries, AdjacencyState};
use pifm::metrics::auc;
use pifm::priors::{estimate_histogram_graphon, PriorModel};
use pifm::{GraphRecord, Matrix, PifmError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

const TRAIN_GRAPHS: usize = 40;
const MASKS_PER_GRAPH: u64 = 4;

fn js_err(e: PifmError) -> JsError {
    JsError::new(&e.to_string())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect()
}

#[wasm_bindgen]
pub struct Demo {
    spec: SyntheticSpec,
    task: TaskSpec,
    prior: PriorModel,
    trainer: FlowTrainer<'static>,
    held_out: u64,
}

#[wasm_bindgen]
impl Demo {
    /// Samples the training graphs, fits the graphon prior and prepares the
    /// masked training instances.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_nodes: usize, p_in: f64, p_out: f64, rate: f64) -> Result<Demo, JsError> {
        let spec = SyntheticSpec {
            family: GraphonFamily::TwoBlock { p_in, p_out, split: 0.5 },
            n_graphs: TRAIN_GRAPHS,
            n_nodes,
            resolution: 16,
        };
        let seed = seed as u64;
        let task = TaskSpec::new(TaskKind::LinkPrediction, rate, seed).map_err(js_err)?;
        let graphs = spec.generate(seed).map_err(js_err)?;
        let prior = PriorModel::Graphon(estimate_histogram_graphon(&graphs, 8).map_err(js_err)?);
        let mut instances = Vec::new();
        for g in &graphs {
            for draw in 0..MASKS_PER_GRAPH {
                let (a_obs, xi) = make_task_input(g, &task, &mut task.rng_for(g.graph_id, draw)).map_err(js_err)?;
                let probs = prior.predict(&a_obs, &xi).map_err(js_err)?.probs;
                instances.push(FixedInstance {
                    a1: g.adjacency().clone(),
                    xi,
                    probs,
                });
            }
        }
        let cfg = FlowConfig {
            lr: 2e-3,
            batch_size: 16,
            net: NetConfig {
                hidden_dim: 12,
                num_layers: 2,
                final_hidden: 24,
                dropout: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let trainer =
            FlowTrainer::from_instances(instances, Vec::new(), TaskKind::LinkPrediction, cfg, seed).map_err(js_err)?;
        Ok(Demo {
            spec,
            task,
            prior,
            trainer,
            held_out: 0,
        })
    }

    /// Runs `epochs` passes over the training instances; returns the last
    /// epoch's mean loss.
    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        let mut loss = f64::NAN;
        for _ in 0..epochs {
            loss = self.trainer.run_epoch().map_err(js_err)?.train_loss;
        }
        Ok(loss)
    }

    pub fn epochs(&self) -> usize {
        self.trainer.history().len()
    }

    /// Draws a new graph from the same model, hides pairs, and returns JSON
    /// with the truth, mask, prior fill, one flow sample and both AUCs.
    pub fn reconstruct(&mut self, k: usize, sigma_s: f64) -> Result<String, JsError> {
        self.held_out += 1;
        let seed = self.task.seed ^ (0x7e57 + self.held_out);
        let g: GraphRecord = SyntheticSpec {
            n_graphs: 1,
            ..self.spec.clone()
        }
        .generate(seed)
        .map_err(js_err)?
        .remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a_obs, xi) = make_task_input(&g, &self.task, &mut rng).map_err(js_err)?;
        let probs = self.prior.predict(&a_obs, &xi).map_err(js_err)?.probs;
        let sample = euler_sample(
            self.trainer.net(),
            &a_obs,
            &xi,
            &probs,
            self.task.kind,
            k.max(1),
            sigma_s.max(0.0),
            false,
            false,
            seed,
            &mut rng,
        )
        .map_err(js_err)?;
        let labels: Vec<f64> = hidden_entries(g.adjacency(), &xi).map_err(js_err)?.iter().map(|e| e.2).collect();
        let score = |a: &AdjacencyState| -> Option<f64> {
            let s: Vec<f64> = hidden_entries(a, &xi).ok()?.iter().map(|e| e.2).collect();
            auc(&s, &labels).ok()
        };
        let body = json!({
            "truth": rows(g.adjacency().matrix()),
            "mask": rows(xi.matrix()),
            "prior": rows(probs.matrix()),
            "flow": rows(sample.final_state.matrix()),
            "prior_auc": score(&probs),
            "flow_auc": score(&sample.final_state),
        });
        Ok(body.to_string())
    }
}
