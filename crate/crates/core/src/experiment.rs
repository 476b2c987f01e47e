//! End-to-end runs: ingest, split, prior, flow, reconstruction and metrics,
//! plus the toy coupling study, (K, σ) sweeps and report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{
    make_task_input, parse_tu_dataset, split_dataset, split_dataset_counts, write_tu_dataset, DatasetSplit,
    GraphonFamily, SyntheticSpec, TaskKind, TaskSpec,
};
use crate::error::{PifmError, Result};
use crate::flow::{euler_sample, train_flow, train_flow_on_instances, EpochStats, FixedInstance, FlowConfig, VelocityNet};
use crate::graph::{AdjacencyState, GraphRecord, ObservationMask};
use crate::linalg::Matrix;
use crate::metrics::{GraphStatistic, MetricsReport, Reconstruction};
use crate::nn::Checkpoint;
use crate::par;
use crate::priors::{
    estimate_histogram_graphon, train_sage, Node2VecConfig, Node2VecPrior, PriorKind, PriorModel, SageConfig,
    CONSTANT_PRIOR_SIGMA, CONSTANT_PRIOR_VALUE,
};

/// Mask draw used for evaluation instances; training uses the epoch index.
pub const EVAL_DRAW: u64 = u64::MAX - 1;
const SAMPLE_SALT: u64 = 0x5a3b_1e00;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Tu { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub kind: PriorKind,
    pub node2vec: Node2VecConfig,
    pub sage: SageConfig,
    pub graphon_resolution: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            kind: PriorKind::Graphon,
            node2vec: Node2VecConfig::default(),
            sage: SageConfig::default(),
            graphon_resolution: crate::data::DEFAULT_GRAPHON_RESOLUTION,
        }
    }
}

/// Pass/fail conditions evaluated on a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    /// Flow macro-AUC at least `margin` points above the prior's.
    BeatsPrior { margin: f64 },
    MinAuc { value: f64 },
    MaxMse { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn evaluate(&self, prior: &MetricsReport, flow: &MetricsReport) -> CheckOutcome {
        let (name, passed, detail) = match *self {
            Check::BeatsPrior { margin } => (
                format!("beats_prior({margin})"),
                flow.auc >= prior.auc + margin,
                format!("flow AUC {:.3} vs prior AUC {:.3}", flow.auc, prior.auc),
            ),
            Check::MinAuc { value } => (
                format!("min_auc({value})"),
                flow.auc >= value,
                format!("flow AUC {:.3}", flow.auc),
            ),
            Check::MaxMse { value } => (
                format!("max_mse({value})"),
                flow.mse <= value,
                format!("flow MSE {:.5}", flow.mse),
            ),
        };
        CheckOutcome { name, passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub task: TaskKind,
    /// Drop rate (link prediction, expansion) or flip rate (denoising).
    pub rate: f64,
    pub prior: PriorConfig,
    pub flow: FlowConfig,
    pub seed: u64,
    pub threshold: f64,
    pub samples_per_graph: usize,
    /// Explicit split sizes; 85/10/5 when absent.
    pub split: Option<SplitCounts>,
    pub strict: bool,
    pub checks: Vec<Check>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(SyntheticSpec {
                family: GraphonFamily::TwoBlock {
                    p_in: 0.7,
                    p_out: 0.1,
                    split: 0.5,
                },
                n_graphs: 230,
                n_nodes: 30,
                resolution: crate::data::DEFAULT_GRAPHON_RESOLUTION,
            }),
            task: TaskKind::LinkPrediction,
            rate: 0.5,
            prior: PriorConfig::default(),
            flow: FlowConfig::default(),
            seed: 0,
            threshold: 0.5,
            samples_per_graph: 1,
            split: Some(SplitCounts {
                train: 200,
                val: 0,
                test: 30,
            }),
            strict: false,
            checks: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.task_spec()?;
        self.flow.validate()?;
        if self.samples_per_graph == 0 {
            return Err(PifmError::Config("samples_per_graph must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(PifmError::Config("threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::new(self.task, self.rate, self.seed)
    }

    /// Fills values implied by other settings: the constant baseline always
    /// runs with unit-variance source noise.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut cfg = self.clone();
        if cfg.prior.kind == PriorKind::Gaussian {
            cfg.flow.sigma_s_train = CONSTANT_PRIOR_SIGMA;
            cfg.flow.sigma_s_sample = CONSTANT_PRIOR_SIGMA;
        }
        cfg
    }
}

/// Full config plus seed, embedded in every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
}

impl Provenance {
    pub fn new(config: &impl Serialize, seed: u64) -> Result<Self> {
        Ok(Provenance {
            tool: "pifm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
        })
    }

    /// Single-line form for CSV comment headers.
    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} seed={} config={}",
            self.tool,
            self.version,
            self.seed,
            serde_json::to_string(&self.config).unwrap_or_default()
        )
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// One evaluated graph: observation, prior fill and flow samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphReconstruction {
    pub graph_id: usize,
    pub truth: AdjacencyState,
    pub a_obs: AdjacencyState,
    pub xi: ObservationMask,
    pub prior_probs: AdjacencyState,
    pub prior_fallback: bool,
    pub samples: Vec<AdjacencyState>,
}

impl GraphReconstruction {
    pub fn mean_sample(&self) -> Result<AdjacencyState> {
        let n = self.truth.n();
        let mut m = Matrix::zeros(n, n);
        for s in &self.samples {
            m = m.zip_map(s.matrix(), |a, b| a + b)?;
        }
        let k = self.samples.len().max(1) as f64;
        AdjacencyState::from_matrix(m.map(|v| v / k))
    }
}

/// Observed entries from `a_obs`, hidden ones from `pred >= threshold`.
pub fn composite_graph(
    pred: &AdjacencyState,
    a_obs: &AdjacencyState,
    xi: &ObservationMask,
    threshold: f64,
) -> Result<AdjacencyState> {
    let n = pred.n();
    let mut m = a_obs.matrix().clone();
    for (i, j) in xi.hidden_pairs() {
        let v = if pred.get(i, j) >= threshold { 1.0 } else { 0.0 };
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    if m.rows() != n {
        return Err(PifmError::dim("composite_graph", format!("{n} vs {}", m.rows())));
    }
    AdjacencyState::from_matrix(m)
}

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Vec<GraphRecord>> {
    let graphs = match cfg {
        DatasetConfig::Synthetic(spec) => spec.generate(seed)?,
        DatasetConfig::Tu { path } => parse_tu_dataset(path)?,
    };
    if graphs.is_empty() {
        return Err(PifmError::Config("dataset holds no graphs".into()));
    }
    Ok(graphs)
}

pub fn split_graphs(n_graphs: usize, counts: Option<SplitCounts>, seed: u64) -> Result<DatasetSplit> {
    match counts {
        Some(c) => split_dataset_counts(n_graphs, c.train, c.val, c.test, seed),
        None => split_dataset(n_graphs, seed),
    }
}

/// Graphs at the given dataset positions.
pub fn select(graphs: &[GraphRecord], ids: &[usize]) -> Vec<GraphRecord> {
    ids.iter().map(|&i| graphs[i].clone()).collect()
}

/// Fits the configured prior on the training graphs. The transductive prior
/// has nothing to fit ahead of time.
pub fn fit_prior(cfg: &PriorConfig, train: &[GraphRecord], task: &TaskSpec, seed: u64) -> Result<(PriorModel, Vec<String>)> {
    Ok(match cfg.kind {
        PriorKind::Node2Vec => (PriorModel::Node2Vec(Node2VecPrior::new(cfg.node2vec.clone(), seed)), vec![]),
        PriorKind::Sage => {
            let fit = train_sage(train, task, &cfg.sage, seed)?;
            (PriorModel::Sage(fit.prior), fit.warnings)
        }
        PriorKind::Graphon => (PriorModel::Graphon(estimate_histogram_graphon(train, cfg.graphon_resolution)?), vec![]),
        PriorKind::Gaussian => (
            PriorModel::Constant {
                value: CONSTANT_PRIOR_VALUE,
            },
            vec![],
        ),
    })
}

/// Evaluation instance of one graph; graphs the task cannot corrupt give None.
pub fn mask_graph(g: &GraphRecord, task: &TaskSpec) -> Result<Option<(AdjacencyState, ObservationMask)>> {
    let mut rng = task.rng_for(g.graph_id, EVAL_DRAW);
    match make_task_input(g, task, &mut rng) {
        Ok(x) => Ok(Some(x)),
        Err(PifmError::Config(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Sampling settings for [`reconstruct`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSettings {
    pub k: usize,
    pub sigma_s: f64,
    pub samples: usize,
    pub clamp_observed: bool,
    pub seed: u64,
}

/// Prior fill and flow samples for every test graph. Sample `s` of graph `g`
/// draws its source noise from a stream fixed by `(seed, g, s)`, so runs that
/// differ only in `k` start from the same source states.
pub fn reconstruct(
    net: &VelocityNet,
    prior: &PriorModel,
    test: &[GraphRecord],
    task: &TaskSpec,
    settings: SampleSettings,
) -> Result<(Vec<GraphReconstruction>, Vec<String>)> {
    let results = par::map(test, |_, g| -> Result<Option<GraphReconstruction>> {
        let Some((a_obs, xi)) = mask_graph(g, task)? else {
            return Ok(None);
        };
        let prior_out = prior.predict(&a_obs, &xi)?;
        let samples = (0..settings.samples)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ SAMPLE_SALT);
                rng.set_stream(((g.graph_id as u64) << 20) | s as u64);
                let out = euler_sample(
                    net,
                    &a_obs,
                    &xi,
                    &prior_out.probs,
                    task.kind,
                    settings.k,
                    settings.sigma_s,
                    settings.clamp_observed,
                    false,
                    settings.seed,
                    &mut rng,
                )?;
                Ok(out.final_state)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(GraphReconstruction {
            graph_id: g.graph_id,
            truth: g.adjacency().clone(),
            a_obs,
            xi,
            prior_probs: prior_out.probs,
            prior_fallback: prior_out.fallback,
            samples,
        }))
    });
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (r, g) in results.into_iter().zip(test) {
        match r? {
            Some(rec) => {
                if rec.prior_fallback {
                    warnings.push(format!("graph {}: prior fell back to a density constant", rec.graph_id));
                }
                out.push(rec);
            }
            None => warnings.push(format!("graph {}: task leaves nothing to reconstruct, skipped", g.graph_id)),
        }
    }
    Ok((out, warnings))
}

/// Per-graph scores. Flow values average over that graph's samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRow {
    pub graph_id: usize,
    pub nodes: usize,
    pub hidden: usize,
    pub prior_auc: f64,
    pub flow_auc: f64,
    pub prior_mse: f64,
    pub flow_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub prior: MetricsReport,
    pub flow: MetricsReport,
    pub per_graph: Vec<GraphRow>,
}

/// Scores prior fills and flow samples on hidden pairs, then compares the
/// degree distribution of thresholded composites with the true graphs.
pub fn evaluate(recs: &[GraphReconstruction], threshold: f64) -> Result<Evaluation> {
    let truth: Vec<AdjacencyState> = recs.iter().map(|r| r.truth.clone()).collect();
    let prior_items: Vec<Reconstruction<'_>> = recs
        .iter()
        .map(|r| Reconstruction {
            prediction: &r.prior_probs,
            truth: &r.truth,
            mask: &r.xi,
        })
        .collect();
    let flow_items: Vec<Reconstruction<'_>> = recs
        .iter()
        .flat_map(|r| {
            r.samples.iter().map(move |s| Reconstruction {
                prediction: s,
                truth: &r.truth,
                mask: &r.xi,
            })
        })
        .collect();
    let mut prior = MetricsReport::from_reconstructions(&prior_items, threshold)?;
    let mut flow = MetricsReport::from_reconstructions(&flow_items, threshold)?;
    if !recs.is_empty() {
        let prior_graphs = recs
            .iter()
            .map(|r| composite_graph(&r.prior_probs, &r.a_obs, &r.xi, threshold))
            .collect::<Result<Vec<_>>>()?;
        let flow_graphs = recs
            .iter()
            .flat_map(|r| r.samples.iter().map(move |s| composite_graph(s, &r.a_obs, &r.xi, threshold)))
            .collect::<Result<Vec<_>>>()?;
        prior = prior.with_distribution(&prior_graphs, &truth, GraphStatistic::Degree)?;
        flow = flow.with_distribution(&flow_graphs, &truth, GraphStatistic::Degree)?;
    }
    let per_graph = recs
        .iter()
        .map(|r| {
            let p = MetricsReport::from_reconstructions(&prior_items_of(r), threshold)?;
            let items: Vec<Reconstruction<'_>> = r
                .samples
                .iter()
                .map(|s| Reconstruction {
                    prediction: s,
                    truth: &r.truth,
                    mask: &r.xi,
                })
                .collect();
            let f = MetricsReport::from_reconstructions(&items, threshold)?;
            Ok(GraphRow {
                graph_id: r.graph_id,
                nodes: r.truth.n(),
                hidden: r.xi.hidden_count(),
                prior_auc: p.auc,
                flow_auc: f.auc,
                prior_mse: p.mse,
                flow_mse: f.mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { prior, flow, per_graph })
}

fn prior_items_of(r: &GraphReconstruction) -> [Reconstruction<'_>; 1] {
    [Reconstruction {
        prediction: &r.prior_probs,
        truth: &r.truth,
        mask: &r.xi,
    }]
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Staged runner. With an artifact directory every finished stage is written
/// out (and listed in `manifest.json`) before the next starts, so a failure
/// leaves the completed stages on disk. With `reuse` set, existing prior and
/// flow checkpoints in that directory are loaded instead of retrained.
pub struct Pipeline {
    cfg: ExperimentConfig,
    dir: Option<PathBuf>,
    reuse: bool,
    provenance: Provenance,
    stages: Vec<Value>,
    pub warnings: Vec<String>,
}

impl Pipeline {
    pub fn new(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Pipeline {
            provenance: Provenance::new(&cfg, cfg.seed)?,
            cfg,
            dir: dir.map(Path::to_path_buf),
            reuse: false,
            stages: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn reuse_checkpoints(mut self, reuse: bool) -> Self {
        self.reuse = reuse;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn record_stage(&mut self, stage: &str, files: &[&str]) -> Result<()> {
        self.stages.push(json!({ "stage": stage, "files": files }));
        if let Some(p) = self.path("manifest.json") {
            let manifest = json!({ "provenance": self.provenance, "stages": self.stages });
            fs::write(p, serde_json::to_string_pretty(&manifest)? + "\n")?;
        }
        Ok(())
    }

    pub fn ingest(&mut self) -> Result<Vec<GraphRecord>> {
        let graphs = load_dataset(&self.cfg.dataset, self.cfg.seed)?;
        if let Some(d) = self.path("dataset") {
            write_tu_dataset(&d, "DATA", &graphs)?;
            fs::write(d.join("provenance.json"), serde_json::to_string_pretty(&self.provenance)? + "\n")?;
        }
        self.record_stage("ingest", &["dataset/DATA_A.txt", "dataset/DATA_graph_indicator.txt"])?;
        Ok(graphs)
    }

    pub fn split(&mut self, n_graphs: usize) -> Result<DatasetSplit> {
        let split = split_graphs(n_graphs, self.cfg.split, self.cfg.seed)?;
        if let Some(p) = self.path("split.json") {
            let body = json!({ "provenance": self.provenance, "split": split });
            fs::write(p, serde_json::to_string_pretty(&body)? + "\n")?;
        }
        self.record_stage("split", &["split.json"])?;
        Ok(split)
    }

    /// Observed graphs and masks of `graphs` under the evaluation draw.
    pub fn mask(&mut self, graphs: &[GraphRecord]) -> Result<Vec<(usize, AdjacencyState, ObservationMask)>> {
        let task = self.cfg.task_spec()?;
        let mut out = Vec::new();
        for g in graphs {
            if let Some((a, xi)) = mask_graph(g, &task)? {
                out.push((g.graph_id, a, xi));
            }
        }
        if let Some(d) = self.path("masks") {
            fs::create_dir_all(&d)?;
            for (gid, a, xi) in &out {
                write_matrix_csv(&d.join(format!("graph_{gid}_observed.csv")), a.matrix(), &self.provenance)?;
                write_matrix_csv(&d.join(format!("graph_{gid}_mask.csv")), xi.matrix(), &self.provenance)?;
            }
        }
        self.record_stage("mask", &["masks/"])?;
        Ok(out)
    }

    pub fn prior(&mut self, train: &[GraphRecord]) -> Result<PriorModel> {
        let ck_path = self.path("prior.ckpt");
        if let (true, Some(p)) = (self.reuse, &ck_path) {
            if p.exists() {
                let model = PriorModel::from_checkpoint(&Checkpoint::load(p)?)?;
                if model.kind() != self.cfg.prior.kind {
                    return Err(PifmError::State(format!(
                        "{} holds a {} prior, config asks for {}",
                        p.display(),
                        model.kind(),
                        self.cfg.prior.kind
                    )));
                }
                self.record_stage("prior", &["prior.ckpt"])?;
                return Ok(model);
            }
        }
        let task = self.cfg.task_spec()?;
        let (model, warnings) = fit_prior(&self.cfg.prior, train, &task, self.cfg.seed)?;
        self.warnings.extend(warnings);
        if let Some(p) = ck_path {
            let mut ck = model.to_checkpoint()?;
            ck.metadata["provenance"] = serde_json::to_value(&self.provenance)?;
            ck.save(p)?;
        }
        self.record_stage("prior", &["prior.ckpt"])?;
        Ok(model)
    }

    pub fn flow(
        &mut self,
        train: &[GraphRecord],
        val: &[GraphRecord],
        prior: &PriorModel,
    ) -> Result<(VelocityNet, Option<usize>, Vec<EpochStats>)> {
        let ck_path = self.path("flow.ckpt");
        if let (true, Some(p)) = (self.reuse, &ck_path) {
            if p.exists() {
                let net = VelocityNet::from_checkpoint(&Checkpoint::load(p)?)?;
                self.record_stage("flow", &["flow.ckpt"])?;
                return Ok((net, None, Vec::new()));
            }
        }
        let task = self.cfg.task_spec()?;
        let trained = train_flow(train, val, prior, task, &self.cfg.flow, self.cfg.seed)?;
        self.warnings.extend(trained.warnings.iter().cloned());
        if let Some(p) = ck_path {
            let meta = json!({ "provenance": self.provenance, "best_epoch": trained.best_epoch });
            trained.net.to_checkpoint(meta).save(p)?;
        }
        if let Some(p) = self.path("training.csv") {
            let table = training_table(&trained.history);
            fs::write(p, table.to_csv(&self.provenance))?;
        }
        self.record_stage("flow", &["flow.ckpt", "training.csv"])?;
        Ok((trained.net, Some(trained.best_epoch), trained.history))
    }

    pub fn sample_settings(&self, k: usize, sigma_s: f64, samples: usize) -> SampleSettings {
        SampleSettings {
            k,
            sigma_s,
            samples,
            clamp_observed: self.cfg.flow.clamp_observed,
            seed: self.cfg.seed,
        }
    }

    pub fn reconstruct(
        &mut self,
        net: &VelocityNet,
        prior: &PriorModel,
        test: &[GraphRecord],
        settings: SampleSettings,
    ) -> Result<Vec<GraphReconstruction>> {
        let task = self.cfg.task_spec()?;
        let (recs, warnings) = reconstruct(net, prior, test, &task, settings)?;
        self.warnings.extend(warnings);
        if let Some(d) = self.path("predictions") {
            fs::create_dir_all(&d)?;
            for r in &recs {
                write_matrix_csv(&d.join(format!("graph_{}_prior.csv", r.graph_id)), r.prior_probs.matrix(), &self.provenance)?;
                write_matrix_csv(
                    &d.join(format!("graph_{}_flow.csv", r.graph_id)),
                    r.mean_sample()?.matrix(),
                    &self.provenance,
                )?;
            }
        }
        self.record_stage("reconstruct", &["predictions/"])?;
        Ok(recs)
    }

    /// Ingest, split and prior: the part shared by experiments and sweeps.
    fn prepare(&mut self) -> Result<Prepared> {
        let graphs = self.ingest().map_err(|e| e.at_stage("ingest"))?;
        let split = self.split(graphs.len()).map_err(|e| e.at_stage("split"))?;
        let train = select(&graphs, &split.train_ids);
        let val = select(&graphs, &split.val_ids);
        let test = select(&graphs, &split.test_ids);
        let prior = self.prior(&train).map_err(|e| e.at_stage("prior"))?;
        Ok(Prepared {
            train,
            val,
            test,
            prior,
        })
    }
}

struct Prepared {
    train: Vec<GraphRecord>,
    val: Vec<GraphRecord>,
    test: Vec<GraphRecord>,
    prior: PriorModel,
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub provenance: Provenance,
    pub prior_metrics: MetricsReport,
    pub flow_metrics: MetricsReport,
    pub per_graph: Vec<GraphRow>,
    pub best_epoch: Option<usize>,
    pub training: Vec<EpochStats>,
    pub checks: Vec<CheckOutcome>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub reconstructions: Vec<GraphReconstruction>,
}

/// Ingest → split → prior → flow → reconstruct → metrics. Errors name the
/// stage that failed; with `artifacts` set, finished stages stay on disk.
pub fn run_experiment(cfg: &ExperimentConfig, artifacts: Option<&Path>) -> Result<ExperimentResult> {
    run_pipeline(Pipeline::new(cfg, artifacts)?)
}

pub fn run_pipeline(mut pipe: Pipeline) -> Result<ExperimentResult> {
    let prep = pipe.prepare()?;
    let (net, best_epoch, training) = pipe
        .flow(&prep.train, &prep.val, &prep.prior)
        .map_err(|e| e.at_stage("flow"))?;
    let cfg = pipe.config().clone();
    let settings = pipe.sample_settings(cfg.flow.k, cfg.flow.sigma_s_sample, cfg.samples_per_graph);
    let recs = pipe
        .reconstruct(&net, &prep.prior, &prep.test, settings)
        .map_err(|e| e.at_stage("reconstruct"))?;
    let eval = evaluate(&recs, cfg.threshold).map_err(|e| e.at_stage("metrics"))?;
    let checks = cfg.checks.iter().map(|c| c.evaluate(&eval.prior, &eval.flow)).collect();
    pipe.record_stage("metrics", &[])?;
    Ok(ExperimentResult {
        provenance: pipe.provenance.clone(),
        prior_metrics: eval.prior,
        flow_metrics: eval.flow,
        per_graph: eval.per_graph,
        best_epoch,
        training,
        checks,
        warnings: pipe.warnings,
        reconstructions: recs,
    })
}

fn training_table(history: &[EpochStats]) -> Table {
    Table {
        name: "training".into(),
        header: vec!["epoch".into(), "steps".into(), "train_loss".into(), "val_loss".into()],
        rows: history
            .iter()
            .map(|h| {
                vec![
                    h.epoch.to_string(),
                    h.steps.to_string(),
                    fmt_f(h.train_loss),
                    h.val_loss.map(fmt_f).unwrap_or_default(),
                ]
            })
            .collect(),
    }
}

impl ExperimentResult {
    pub fn to_report(&self) -> Report {
        let mut predictions = Vec::new();
        for r in &self.reconstructions {
            predictions.push((format!("graph_{}_prior", r.graph_id), r.prior_probs.matrix().clone()));
            if let Ok(m) = r.mean_sample() {
                predictions.push((format!("graph_{}_flow", r.graph_id), m.into_matrix()));
            }
        }
        Report {
            title: "reconstruction experiment".into(),
            provenance: self.provenance.clone(),
            metrics: vec![
                ("prior".into(), self.prior_metrics.clone()),
                ("pifm".into(), self.flow_metrics.clone()),
            ],
            scalars: Vec::new(),
            tables: vec![per_graph_table(&self.per_graph), training_table(&self.training)],
            predictions,
            checks: self.checks.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

fn per_graph_table(rows: &[GraphRow]) -> Table {
    Table {
        name: "per_graph".into(),
        header: ["graph_id", "nodes", "hidden", "prior_auc", "flow_auc", "prior_mse", "flow_mse"]
            .map(String::from)
            .to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.graph_id.to_string(),
                    r.nodes.to_string(),
                    r.hidden.to_string(),
                    fmt_f(r.prior_auc),
                    fmt_f(r.flow_auc),
                    fmt_f(r.prior_mse),
                    fmt_f(r.flow_mse),
                ]
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub ks: Vec<usize>,
    /// Sampling noise levels; empty means the config's `sigma_s_sample`.
    pub sigmas: Vec<f64>,
    pub samples_per_graph: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ks: vec![1, 10, 100],
            sigmas: Vec::new(),
            samples_per_graph: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub sigma_s: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub provenance: Provenance,
    pub sweep: SweepSpec,
    pub prior_metrics: MetricsReport,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

/// Trains once (or reuses checkpoints) and evaluates every `(K, σ)` point on
/// the same test masks and source-noise streams.
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec, artifacts: Option<&Path>) -> Result<SweepResult> {
    run_sweep_with(Pipeline::new(cfg, artifacts)?, sweep)
}

pub fn run_sweep_with(mut pipe: Pipeline, sweep: &SweepSpec) -> Result<SweepResult> {
    if sweep.ks.is_empty() || sweep.ks.contains(&0) {
        return Err(PifmError::Config("sweep needs a nonempty list of K >= 1".into()));
    }
    if sweep.samples_per_graph == 0 {
        return Err(PifmError::Config("sweep needs at least one sample per graph".into()));
    }
    let prep = pipe.prepare()?;
    let (net, _, _) = pipe
        .flow(&prep.train, &prep.val, &prep.prior)
        .map_err(|e| e.at_stage("flow"))?;
    let cfg = pipe.config().clone();
    let sigmas = if sweep.sigmas.is_empty() {
        vec![cfg.flow.sigma_s_sample]
    } else {
        sweep.sigmas.clone()
    };
    let task = cfg.task_spec()?;
    let mut rows = Vec::new();
    let mut prior_metrics = None;
    for &sigma_s in &sigmas {
        for &k in &sweep.ks {
            let settings = pipe.sample_settings(k, sigma_s, sweep.samples_per_graph);
            let (recs, warnings) =
                reconstruct(&net, &prep.prior, &prep.test, &task, settings).map_err(|e| e.at_stage("reconstruct"))?;
            if prior_metrics.is_none() {
                pipe.warnings.extend(warnings);
            }
            let eval = evaluate(&recs, cfg.threshold).map_err(|e| e.at_stage("metrics"))?;
            prior_metrics.get_or_insert(eval.prior);
            rows.push(SweepRow {
                k,
                sigma_s,
                metrics: eval.flow,
            });
        }
    }
    pipe.record_stage("sweep", &[])?;
    Ok(SweepResult {
        provenance: pipe.provenance.clone(),
        sweep: sweep.clone(),
        prior_metrics: prior_metrics.unwrap_or_default(),
        rows,
        warnings: pipe.warnings,
    })
}

impl SweepResult {
    pub fn to_report(&self) -> Report {
        let col = |name: &str, f: fn(&MetricsReport) -> f64| Table {
            name: name.into(),
            header: vec!["k".into(), "sigma_s".into(), name.trim_end_matches("_vs_k").into()],
            rows: self
                .rows
                .iter()
                .map(|r| vec![r.k.to_string(), fmt_f(r.sigma_s), fmt_f(f(&r.metrics))])
                .collect(),
        };
        let full = Table {
            name: "sweep".into(),
            header: ["k", "sigma_s", "auc", "ap", "mse", "fpr", "fnr", "pooled_auc", "mmd2"]
                .map(String::from)
                .to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| {
                    let m = &r.metrics;
                    vec![
                        r.k.to_string(),
                        fmt_f(r.sigma_s),
                        fmt_f(m.auc),
                        fmt_f(m.ap),
                        fmt_f(m.mse),
                        fmt_f(m.fpr),
                        fmt_f(m.fnr),
                        fmt_f(m.pooled_auc),
                        fmt_f(m.mmd2.unwrap_or(f64::NAN)),
                    ]
                })
                .collect(),
        };
        Report {
            title: "K / noise sweep".into(),
            provenance: self.provenance.clone(),
            metrics: std::iter::once(("prior".to_string(), self.prior_metrics.clone()))
                .chain(
                    self.rows
                        .iter()
                        .map(|r| (format!("pifm_k{}_sigma{}", r.k, r.sigma_s), r.metrics.clone())),
                )
                .collect(),
            scalars: Vec::new(),
            tables: vec![
                full,
                col("auc_vs_k", |m| m.auc),
                col("mmd2_vs_k", |m| m.mmd2.unwrap_or(f64::NAN)),
            ],
            predictions: Vec::new(),
            checks: Vec::new(),
            warnings: self.warnings.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Toy coupling
// ---------------------------------------------------------------------------

/// Four-cycle with both diagonals hidden. The diagonals are jointly present
/// with probability `p_both` and jointly absent otherwise, so the two hidden
/// entries are perfectly correlated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub p_both: f64,
    /// Training instances drawn from the two modes.
    pub instances: usize,
    pub samples: usize,
    pub node2vec: Node2VecConfig,
    pub flow: FlowConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 0,
            p_both: 0.6,
            instances: 100,
            samples: 200,
            node2vec: Node2VecConfig::default(),
            flow: FlowConfig {
                sigma_s_train: 0.5,
                sigma_s_sample: 0.5,
                k: 100,
                lr: 2e-3,
                batch_size: 50,
                epochs: 300,
                net: crate::flow::NetConfig {
                    hidden_dim: 16,
                    num_layers: 2,
                    final_hidden: 32,
                    dropout: 0.0,
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }
}

pub const TOY_HIDDEN: [(usize, usize); 2] = [(0, 2), (1, 3)];

fn toy_graph(both: bool) -> Result<AdjacencyState> {
    let mut edges = vec![(0, 1), (1, 2), (2, 3), (0, 3)];
    if both {
        edges.extend(TOY_HIDDEN);
    }
    AdjacencyState::from_edges(4, &edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub provenance: Provenance,
    pub samples: usize,
    /// Counts of hidden-edge outcomes `[00, 01, 10, 11]` after thresholding.
    pub flow_modes: [usize; 4],
    pub valid_rate: f64,
    pub both_rate: f64,
    /// Prior probability of each hidden edge.
    pub prior_probs: [f64; 2],
    /// Modes of independent Bernoulli draws from the prior.
    pub prior_modes: [usize; 4],
    pub prior_invalid_rate: f64,
    /// `p0 (1-p1) + (1-p0) p1`.
    pub prior_invalid_expected: f64,
    pub final_loss: f64,
}

fn mode_index(a: bool, b: bool) -> usize {
    (a as usize) << 1 | b as usize
}

pub fn run_toy(cfg: &ToyConfig) -> Result<ToyReport> {
    if !(cfg.p_both > 0.0 && cfg.p_both < 1.0) || cfg.instances == 0 || cfg.samples == 0 {
        return Err(PifmError::Config("toy needs p_both in (0, 1) and positive counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a_obs = toy_graph(false)?;
    let xi = ObservationMask::from_hidden_pairs(4, &TOY_HIDDEN)?;
    // Exactly round(p_both * instances) instances carry both diagonals.
    let n_both = (cfg.p_both * cfg.instances as f64).round() as usize;
    let truths: Vec<AdjacencyState> = (0..cfg.instances)
        .map(|i| toy_graph(i < n_both))
        .collect::<Result<_>>()?;

    let mut prior = Node2VecPrior::new(cfg.node2vec.clone(), cfg.seed);
    let pairs: Vec<_> = truths.iter().map(|t| (a_obs.clone(), xi.clone(), t.clone())).collect();
    prior.fit_shared_head(&pairs)?;
    let prior = PriorModel::Node2Vec(prior);
    let probs = prior.predict(&a_obs, &xi)?.probs;

    let train: Vec<FixedInstance> = truths
        .iter()
        .map(|t| FixedInstance {
            a1: t.clone(),
            xi: xi.clone(),
            probs: probs.clone(),
        })
        .collect();
    let trained = train_flow_on_instances(train, Vec::new(), TaskKind::LinkPrediction, &cfg.flow, cfg.seed)?;
    let final_loss = trained.history.last().map_or(f64::NAN, |h| h.train_loss);
    if !final_loss.is_finite() {
        return Err(PifmError::Training(format!("toy flow diverged: {:?}", trained.history.last())));
    }

    let mut flow_modes = [0usize; 4];
    let mut prior_modes = [0usize; 4];
    let (p0, p1) = (probs.get(0, 2), probs.get(1, 3));
    for s in 0..cfg.samples {
        let out = euler_sample(
            &trained.net,
            &a_obs,
            &xi,
            &probs,
            TaskKind::LinkPrediction,
            cfg.flow.k,
            cfg.flow.sigma_s_sample,
            cfg.flow.clamp_observed,
            false,
            s as u64,
            &mut rng,
        )?;
        let f = &out.final_state;
        flow_modes[mode_index(f.get(0, 2) >= 0.5, f.get(1, 3) >= 0.5)] += 1;
        prior_modes[mode_index(rng.random::<f64>() < p0, rng.random::<f64>() < p1)] += 1;
    }
    let n = cfg.samples as f64;
    Ok(ToyReport {
        provenance: Provenance::new(cfg, cfg.seed)?,
        samples: cfg.samples,
        flow_modes,
        valid_rate: (flow_modes[0] + flow_modes[3]) as f64 / n,
        both_rate: flow_modes[3] as f64 / n,
        prior_probs: [p0, p1],
        prior_modes,
        prior_invalid_rate: (prior_modes[1] + prior_modes[2]) as f64 / n,
        prior_invalid_expected: p0 * (1.0 - p1) + (1.0 - p0) * p1,
        final_loss,
    })
}

impl ToyReport {
    pub fn to_report(&self) -> Report {
        let modes = |name: &str, m: &[usize; 4]| Table {
            name: name.into(),
            header: vec!["mode".into(), "count".into()],
            rows: ["00", "01", "10", "11"]
                .iter()
                .zip(m)
                .map(|(k, c)| vec![k.to_string(), c.to_string()])
                .collect(),
        };
        Report {
            title: "toy coupling".into(),
            provenance: self.provenance.clone(),
            metrics: Vec::new(),
            scalars: vec![
                ("valid_rate".into(), self.valid_rate),
                ("both_rate".into(), self.both_rate),
                ("prior_p02".into(), self.prior_probs[0]),
                ("prior_p13".into(), self.prior_probs[1]),
                ("prior_invalid_rate".into(), self.prior_invalid_rate),
                ("prior_invalid_expected".into(), self.prior_invalid_expected),
                ("final_loss".into(), self.final_loss),
            ],
            tables: vec![modes("flow_modes", &self.flow_modes), modes("prior_modes", &self.prior_modes)],
            predictions: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// CSV with a provenance comment line on top.
    pub fn to_csv(&self, prov: &Provenance) -> String {
        let mut s = prov.comment_line();
        s.push('\n');
        s.push_str(&self.header.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn write_matrix_csv(path: &Path, m: &Matrix, prov: &Provenance) -> Result<()> {
    let mut s = prov.comment_line();
    s.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| fmt_f(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Everything [`emit_report`] writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub provenance: Provenance,
    pub metrics: Vec<(String, MetricsReport)>,
    pub scalars: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub predictions: Vec<(String, Matrix)>,
    pub checks: Vec<CheckOutcome>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn empty(provenance: Provenance) -> Self {
        Report {
            title: "empty result set".into(),
            provenance,
            metrics: Vec::new(),
            scalars: Vec::new(),
            tables: Vec::new(),
            predictions: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Names of NaN metrics and scalars.
    pub fn nan_entries(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, m) in &self.metrics {
            out.extend(m.nan_fields().into_iter().map(|f| format!("{name}.{f}")));
        }
        out.extend(self.scalars.iter().filter(|(_, v)| v.is_nan()).map(|(k, _)| k.clone()));
        out
    }

    /// Deterministic JSON of metrics, scalars, checks and warnings.
    pub fn metrics_json(&self) -> Result<String> {
        let body = json!({
            "title": self.title,
            "provenance": self.provenance,
            "metrics": self.metrics.iter().map(|(k, m)| json!({ "name": k, "report": m })).collect::<Vec<_>>(),
            "scalars": self.scalars.iter().map(|(k, v)| json!({ "name": k, "value": v })).collect::<Vec<_>>(),
            "checks": self.checks,
            "nan": self.nan_entries(),
            "warnings": self.warnings,
        });
        Ok(serde_json::to_string_pretty(&body)? + "\n")
    }

    pub fn summary(&self, strict: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.title);
        let _ = writeln!(s, "seed {}", self.provenance.seed);
        let _ = writeln!(s, "config {}", serde_json::to_string(&self.provenance.config).unwrap_or_default());
        let _ = writeln!(s);
        let _ = writeln!(s, "{} metric rows", self.metrics.len());
        for (name, m) in &self.metrics {
            let _ = writeln!(
                s,
                "  {name:<24} auc {:>7.3}  ap {:>7.3}  mse {:>8.5}  fpr {:>6.3}  fnr {:>6.3}  mmd2 {}",
                m.auc,
                m.ap,
                m.mse,
                m.fpr,
                m.fnr,
                m.mmd2.map_or("-".into(), |v| format!("{v:.5}"))
            );
        }
        for (name, v) in &self.scalars {
            let _ = writeln!(s, "  {name:<24} {v}");
        }
        for t in &self.tables {
            let _ = writeln!(s, "table {}: {} rows", t.name, t.rows.len());
        }
        let nan = self.nan_entries();
        if !nan.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "FLAGGED: undefined metrics{}", if strict { " (strict)" } else { "" });
            for n in &nan {
                let _ = writeln!(s, "  {n} is NaN");
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(s);
            for c in &self.checks {
                let _ = writeln!(s, "check {} {}: {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s);
            for w in &self.warnings {
                let _ = writeln!(s, "warning: {w}");
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmitOptions {
    pub force: bool,
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmitOutcome {
    pub files: Vec<PathBuf>,
    pub flagged: Vec<String>,
    pub failed_checks: Vec<String>,
    /// False when a check failed, or when strict and a metric is NaN.
    pub ok: bool,
}

/// Writes `metrics.json`, `summary.txt`, one CSV per table and one CSV per
/// prediction matrix. Refuses a nonempty directory unless forced.
pub fn emit_report(report: &Report, out_dir: impl AsRef<Path>, opts: EmitOptions) -> Result<EmitOutcome> {
    let dir = out_dir.as_ref();
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !opts.force {
        return Err(PifmError::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} already holds results; pass --force to overwrite", dir.display()),
        )));
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, body)?;
        files.push(p);
        Ok(())
    };
    put("metrics.json", report.metrics_json()?)?;
    for t in &report.tables {
        put(&format!("{}.csv", t.name), t.to_csv(&report.provenance))?;
    }
    put("summary.txt", report.summary(opts.strict))?;
    for (name, m) in &report.predictions {
        let p = dir.join("predictions").join(format!("{name}.csv"));
        fs::create_dir_all(p.parent().unwrap_or(dir))?;
        write_matrix_csv(&p, m, &report.provenance)?;
        files.push(p);
    }
    let flagged = report.nan_entries();
    let failed_checks: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let ok = failed_checks.is_empty() && !(opts.strict && !flagged.is_empty());
    Ok(EmitOutcome {
        files,
        flagged,
        failed_checks,
        ok,
    })
}

#[cfg(test)]
mod tests;
