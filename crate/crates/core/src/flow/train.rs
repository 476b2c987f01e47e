use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_a0, FlowConfig, VelocityNet};
use crate::data::{make_task_input, TaskKind, TaskSpec};
use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, GraphRecord, ObservationMask};
use crate::linalg::Matrix;
use crate::nn::{adam_step, AdamState, GradientMap, Tape};
use crate::par;
use crate::priors::PriorModel;

/// Masks for validation use this draw index, disjoint from training draws.
const VAL_DRAW: u64 = u64::MAX;
/// Fixed interpolation times at which validation loss is measured.
const VAL_TIMES: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedFlow {
    /// Network with the best validation loss (best training loss without a
    /// validation set).
    pub net: VelocityNet,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

/// One masked training instance.
#[derive(Clone, Debug)]
struct Instance {
    xi: ObservationMask,
    probs: AdjacencyState,
}

/// A training pair with its mask and prior fixed up front, for data that is
/// not produced by a [`TaskSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct FixedInstance {
    pub a1: AdjacencyState,
    pub xi: ObservationMask,
    pub probs: AdjacencyState,
}

enum Source<'a> {
    Task {
        train: &'a [GraphRecord],
        prior: &'a PriorModel,
        task: TaskSpec,
    },
    Fixed(Vec<FixedInstance>),
}

impl Source<'_> {
    fn len(&self) -> usize {
        match self {
            Source::Task { train, .. } => train.len(),
            Source::Fixed(v) => v.len(),
        }
    }
}

fn prepare(g: &GraphRecord, task: &TaskSpec, draw: u64, prior: &PriorModel) -> Result<Option<Instance>> {
    let mut rng = task.rng_for(g.graph_id, draw);
    let (a_obs, xi) = match make_task_input(g, task, &mut rng) {
        Ok(x) => x,
        Err(PifmError::Config(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let probs = prior.predict(&a_obs, &xi)?.probs;
    Ok(Some(Instance { xi, probs }))
}

fn upper_weight(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, j| if i < j { 1.0 } else { 0.0 })
}

/// Flow-matching loss `mean_{i<j} (v(A_t, t) - (A_1 - A_0))²` on a tape.
fn instance_loss<R: Rng + ?Sized>(
    net: &VelocityNet,
    tape: &mut Tape,
    a1: &AdjacencyState,
    inst: &Instance,
    t: f64,
    sigma_s: f64,
    kind: TaskKind,
    rng: &mut R,
    dropout: bool,
) -> Result<crate::nn::Var> {
    let a0 = build_a0(a1, &inst.xi, &inst.probs, sigma_s, kind, rng)?;
    let a_t = a0.matrix().zip_map(a1.matrix(), |x, y| (1.0 - t) * x + t * y)?;
    let target = a1.matrix().zip_map(a0.matrix(), |x, y| x - y)?;
    let v = if dropout {
        net.forward_on_tape(tape, &a_t, t, Some(rng))?
    } else {
        net.forward_on_tape::<R>(tape, &a_t, t, None)?
    };
    tape.weighted_mse(v, target, upper_weight(a1.n()))
}

/// Stepwise flow training. Keeps the best network seen so far, which stays
/// available after a divergence error.
pub struct FlowTrainer<'a> {
    cfg: FlowConfig,
    kind: TaskKind,
    source: Source<'a>,
    seed: u64,
    net: VelocityNet,
    adam: AdamState,
    epoch: usize,
    steps: u64,
    order: Vec<usize>,
    shuffle_rng: ChaCha8Rng,
    cache: HashMap<(usize, u64), Option<Instance>>,
    val: Vec<(u64, Instance, AdjacencyState)>,
    best: Option<(f64, usize, VelocityNet)>,
    history: Vec<EpochStats>,
    warnings: Vec<String>,
}

impl<'a> FlowTrainer<'a> {
    pub fn new(
        train: &'a [GraphRecord],
        val: &[GraphRecord],
        prior: &'a PriorModel,
        task: TaskSpec,
        cfg: FlowConfig,
        seed: u64,
    ) -> Result<Self> {
        task.validate()?;
        let prepared = par::map(val, |_, g| prepare(g, &task, VAL_DRAW, prior));
        let mut val_set = Vec::new();
        for (g, p) in val.iter().zip(prepared) {
            if let Some(inst) = p? {
                val_set.push((g.graph_id as u64, inst, g.adjacency().clone()));
            }
        }
        Self::build(Source::Task { train, prior, task }, task.kind, val_set, cfg, seed)
    }

    /// Trains on fixed instances; validation instances are scored with the
    /// same deterministic protocol as task-generated ones.
    pub fn from_instances(
        train: Vec<FixedInstance>,
        val: Vec<FixedInstance>,
        kind: TaskKind,
        cfg: FlowConfig,
        seed: u64,
    ) -> Result<Self> {
        let val_set = val
            .into_iter()
            .enumerate()
            .map(|(k, f)| (k as u64, Instance { xi: f.xi, probs: f.probs }, f.a1))
            .collect();
        Self::build(Source::Fixed(train), kind, val_set, cfg, seed)
    }

    fn build(
        source: Source<'a>,
        kind: TaskKind,
        val: Vec<(u64, Instance, AdjacencyState)>,
        cfg: FlowConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if source.len() == 0 {
            return Err(PifmError::Config("flow training needs a nonempty training set".into()));
        }
        let net = VelocityNet::new(cfg.net.clone(), seed)?;
        Ok(FlowTrainer {
            adam: AdamState::new(cfg.lr),
            order: (0..source.len()).collect(),
            cfg,
            kind,
            source,
            seed,
            net,
            epoch: 0,
            steps: 0,
            shuffle_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xf10e),
            cache: HashMap::new(),
            val,
            best: None,
            history: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn net(&self) -> &VelocityNet {
        &self.net
    }

    pub fn best_net(&self) -> &VelocityNet {
        self.best.as_ref().map(|b| &b.2).unwrap_or(&self.net)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    fn draw_for(&self, epoch: usize) -> u64 {
        match self.cfg.mask_pool {
            Some(m) => (epoch % m) as u64,
            None => epoch as u64,
        }
    }

    /// One optimizer step over the given training indices. Returns the mean
    /// loss, or `None` when no graph in the batch admits a task instance.
    pub fn step_batch(&mut self, batch: &[usize], draw: u64) -> Result<Option<f64>> {
        let pooled = self.cfg.mask_pool.is_some();
        let (net, cfg, kind, source, cache) = (&self.net, &self.cfg, self.kind, &self.source, &self.cache);
        let (seed, step) = (self.seed, self.steps);
        type Out = (Option<(f64, GradientMap)>, Option<Option<Instance>>);
        let results = par::map(batch, |_, &gi| -> Result<Out> {
            let (a1, inst, fresh) = match source {
                Source::Fixed(items) => {
                    let f = &items[gi];
                    let inst = Instance {
                        xi: f.xi.clone(),
                        probs: f.probs.clone(),
                    };
                    (&f.a1, Some(inst), None)
                }
                Source::Task { train, prior, task } => {
                    let g = &train[gi];
                    match cache.get(&(gi, draw)) {
                        Some(c) => (g.adjacency(), c.clone(), None),
                        None => {
                            let p = prepare(g, task, draw, prior)?;
                            (g.adjacency(), p.clone(), pooled.then_some(p))
                        }
                    }
                }
            };
            let Some(inst) = inst else { return Ok((None, fresh)) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((step << 20) ^ gi as u64);
            let t: f64 = rng.random();
            let mut tape = Tape::new();
            let loss = instance_loss(net, &mut tape, a1, &inst, t, cfg.sigma_s_train, kind, &mut rng, true)?;
            tape.backward(loss)?;
            Ok((Some((tape.scalar(loss), tape.param_grads())), fresh))
        });
        let mut total = GradientMap::default();
        let (mut used, mut loss_sum) = (0usize, 0.0);
        for (r, &gi) in results.into_iter().zip(batch) {
            let (out, fresh) = r?;
            if let Some(p) = fresh {
                self.cache.insert((gi, draw), p);
            }
            match out {
                Some((l, g)) => {
                    loss_sum += l;
                    used += 1;
                    total.add_assign(&g);
                }
                None if self.epoch == 0 => {
                    if let Source::Task { train, .. } = &self.source {
                        self.warnings
                            .push(format!("graph {} skipped: task leaves no hidden pairs", train[gi].graph_id));
                    }
                }
                None => {}
            }
        }
        if used == 0 {
            return Ok(None);
        }
        let loss = loss_sum / used as f64;
        if !loss.is_finite() {
            return Err(PifmError::Training(format!("flow loss diverged at step {}", self.steps)));
        }
        total.scale(1.0 / used as f64);
        total.apply_to(&mut self.net.params)?;
        if let Some(c) = self.cfg.grad_clip {
            self.net.params.clip_grad_norm(c);
        }
        adam_step(&mut self.net.params, &mut self.adam)?;
        self.steps += 1;
        Ok(Some(loss))
    }

    /// Deterministic loss of the current network on the validation instances.
    pub fn validation_loss(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let losses = par::map(&self.val, |_, (gid, inst, a1)| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7a1);
            rng.set_stream(*gid);
            let mut s = 0.0;
            for &t in &VAL_TIMES {
                let mut tape = Tape::new();
                let l = instance_loss(&self.net, &mut tape, a1, inst, t, self.cfg.sigma_s_train, self.kind, &mut rng, false)?;
                s += tape.scalar(l);
            }
            Ok(s / VAL_TIMES.len() as f64)
        });
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(Some(total / self.val.len() as f64))
    }

    /// Shuffles, runs every batch once, then scores the network.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let draw = self.draw_for(self.epoch);
        self.adam.lr = self.cfg.lr_at(self.epoch);
        rand::seq::SliceRandom::shuffle(self.order.as_mut_slice(), &mut self.shuffle_rng);
        let order = self.order.clone();
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            if let Some(l) = self.step_batch(chunk, draw)? {
                sum += l;
                batches += 1;
            }
        }
        if batches == 0 {
            return Err(PifmError::Training("no training graph admits a task instance".into()));
        }
        let train_loss = sum / batches as f64;
        let val_loss = self.validation_loss()?;
        if val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(PifmError::Training(format!("validation loss diverged at epoch {}", self.epoch)));
        }
        let score = val_loss.unwrap_or(train_loss);
        if self.best.as_ref().is_none_or(|b| score < b.0) {
            self.best = Some((score, self.epoch, self.net.clone()));
        }
        let stats = EpochStats {
            epoch: self.epoch,
            steps: self.steps,
            train_loss,
            val_loss,
        };
        self.history.push(stats.clone());
        self.epoch += 1;
        Ok(stats)
    }

    pub fn finish(self) -> TrainedFlow {
        let (best_epoch, net) = match self.best {
            Some((_, e, n)) => (e, n),
            None => (0, self.net),
        };
        TrainedFlow {
            net,
            best_epoch,
            history: self.history,
            warnings: self.warnings,
        }
    }
}

/// Trains for `cfg.epochs` epochs and returns the best checkpoint.
pub fn train_flow_on_instances(
    train: Vec<FixedInstance>,
    val: Vec<FixedInstance>,
    kind: TaskKind,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<TrainedFlow> {
    let mut trainer = FlowTrainer::from_instances(train, val, kind, cfg.clone(), seed)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

pub fn train_flow(
    train: &[GraphRecord],
    val: &[GraphRecord],
    prior: &PriorModel,
    task: TaskSpec,
    cfg: &FlowConfig,
    seed: u64,
) -> Result<TrainedFlow> {
    let mut trainer = FlowTrainer::new(train, val, prior, task, cfg.clone(), seed)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
