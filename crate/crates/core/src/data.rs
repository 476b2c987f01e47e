//! Dataset ingestion, splitting, task inputs and graphon-based synthetic data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, GraphRecord, ObservationMask};
use crate::linalg::Matrix;

pub const TRAIN_RATIO: f64 = 0.85;
pub const VAL_RATIO: f64 = 0.10;

/// Counts like `ceil(rate * total)` are computed with this slack so that
/// products such as `0.2 * 45` do not round up past their exact value.
const COUNT_EPS: f64 = 1e-9;

fn rate_count(rate: f64, total: usize) -> usize {
    let raw = (rate * total as f64 - COUNT_EPS).ceil();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(total)
    }
}

// ---------------------------------------------------------------------------
// TU benchmark layout
// ---------------------------------------------------------------------------

fn find_with_suffix(root: &Path, suffix: &str) -> Result<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.ends_with(suffix))
        })
        .collect();
    hits.sort();
    match hits.len() {
        0 => Err(PifmError::Parse {
            path: root.to_path_buf(),
            line: 0,
            msg: format!("no file ending in `{suffix}`"),
        }),
        1 => Ok(hits.remove(0)),
        _ => Err(PifmError::Parse {
            path: root.to_path_buf(),
            line: 0,
            msg: format!("several files end in `{suffix}`: {hits:?}"),
        }),
    }
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| PifmError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("expected a positive integer, found `{}`", tok.trim()),
    })
}

/// Reads `<DS>_A.txt` and `<DS>_graph_indicator.txt` from `root`.
///
/// Node and edge labels are ignored. Nodes are re-indexed from 0 inside each
/// graph in the order they appear in the indicator file.
pub fn parse_tu_dataset(root: impl AsRef<Path>) -> Result<Vec<GraphRecord>> {
    let root = root.as_ref();
    let ind_path = find_with_suffix(root, "_graph_indicator.txt")?;
    let a_path = find_with_suffix(root, "_A.txt")?;

    // node k (1-indexed) -> (graph id, local index)
    let mut node_graph: Vec<(usize, usize)> = Vec::new();
    let mut graph_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let reader = BufReader::new(fs::File::open(&ind_path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let gid = parse_int(&ind_path, idx + 1, &line)?;
        let size = graph_sizes.entry(gid).or_insert(0);
        node_graph.push((gid, *size));
        *size += 1;
    }

    let mut edges: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let reader = BufReader::new(fs::File::open(&a_path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(PifmError::Parse {
                path: a_path.clone(),
                line: lineno,
                msg: format!("expected `i, j`, found `{line}`"),
            });
        };
        let (a, b) = (parse_int(&a_path, lineno, a)?, parse_int(&a_path, lineno, b)?);
        let lookup = |k: usize| -> Result<(usize, usize)> {
            if k == 0 || k > node_graph.len() {
                return Err(PifmError::Parse {
                    path: a_path.clone(),
                    line: lineno,
                    msg: format!("node {k} not listed in the graph indicator"),
                });
            }
            Ok(node_graph[k - 1])
        };
        let ((ga, la), (gb, lb)) = (lookup(a)?, lookup(b)?);
        if ga != gb {
            return Err(PifmError::Parse {
                path: a_path.clone(),
                line: lineno,
                msg: format!("edge {a}-{b} joins graph {ga} and graph {gb}"),
            });
        }
        if la == lb {
            // Self-loops are not modeled.
            continue;
        }
        edges.entry(ga).or_default().push((la, lb));
    }

    graph_sizes
        .into_iter()
        .map(|(gid, n)| {
            let e = edges.remove(&gid).unwrap_or_default();
            GraphRecord::new(gid, AdjacencyState::from_edges(n, &e)?)
        })
        .collect()
}

/// Writes graphs in TU layout as `<name>_A.txt` / `<name>_graph_indicator.txt`.
/// Both directions of every edge are listed, like the benchmark files.
pub fn write_tu_dataset(root: impl AsRef<Path>, name: &str, graphs: &[GraphRecord]) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root)?;
    let mut a_out = BufWriter::new(fs::File::create(root.join(format!("{name}_A.txt")))?);
    let mut ind_out = BufWriter::new(fs::File::create(
        root.join(format!("{name}_graph_indicator.txt")),
    )?);
    let mut offset = 0usize;
    for g in graphs {
        let n = g.n();
        for _ in 0..n {
            writeln!(ind_out, "{}", g.graph_id)?;
        }
        let a = g.adjacency();
        for i in 0..n {
            for j in a.neighbors(i) {
                writeln!(a_out, "{}, {}", offset + i + 1, offset + j + 1)?;
            }
        }
        offset += n;
    }
    a_out.flush()?;
    ind_out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// 85/10/5 split of graph indices, shuffled deterministically by `seed`.
pub fn split_dataset(n_graphs: usize, seed: u64) -> Result<DatasetSplit> {
    if n_graphs < 20 {
        return Err(PifmError::Config(format!(
            "{n_graphs} graphs cannot be split 85/10/5 with a nonempty test set (need >= 20)"
        )));
    }
    let n_train = (TRAIN_RATIO * n_graphs as f64 + COUNT_EPS).floor() as usize;
    let n_val = (VAL_RATIO * n_graphs as f64 + COUNT_EPS).floor() as usize;
    let mut ids: Vec<usize> = (0..n_graphs).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    Ok(DatasetSplit {
        train_ids: ids,
        val_ids,
        test_ids,
    })
}

/// Split with explicit sizes; counts must not exceed the dataset.
pub fn split_dataset_counts(n_graphs: usize, train: usize, val: usize, test: usize, seed: u64) -> Result<DatasetSplit> {
    if train == 0 || test == 0 {
        return Err(PifmError::Config("train and test splits must be nonempty".into()));
    }
    if train + val + test > n_graphs {
        return Err(PifmError::Config(format!(
            "split {train}/{val}/{test} needs {} graphs, dataset has {n_graphs}",
            train + val + test
        )));
    }
    let mut ids: Vec<usize> = (0..n_graphs).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids.truncate(train + val + test);
    let test_ids = ids.split_off(train + val);
    let val_ids = ids.split_off(train);
    Ok(DatasetSplit {
        train_ids: ids,
        val_ids,
        test_ids,
    })
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LinkPrediction,
    Expansion,
    Denoising,
}

impl std::str::FromStr for TaskKind {
    type Err = PifmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linkpred" | "link_prediction" => Ok(TaskKind::LinkPrediction),
            "expansion" => Ok(TaskKind::Expansion),
            "denoise" | "denoising" => Ok(TaskKind::Denoising),
            other => Err(PifmError::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::LinkPrediction => "linkpred",
            TaskKind::Expansion => "expansion",
            TaskKind::Denoising => "denoise",
        })
    }
}

/// Which reconstruction problem to pose. `rate` is the drop rate for link
/// prediction and expansion, the flip rate for denoising.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub rate: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, rate: f64, seed: u64) -> Result<Self> {
        let t = TaskSpec { kind, rate, seed };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(PifmError::Config(format!(
                "task rate {} must lie in (0, 1)",
                self.rate
            )));
        }
        Ok(())
    }

    /// Rng for the `draw`-th mask of graph `graph_id`; masks are a pure
    /// function of (graph, task, seed, draw).
    pub fn rng_for(&self, graph_id: usize, draw: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((graph_id as u64) << 32) ^ draw);
        rng
    }
}

fn sample_sorted<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, len, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Builds the observed graph and the observation mask for one task instance.
pub fn make_task_input<R: Rng + ?Sized>(
    g: &GraphRecord,
    task: &TaskSpec,
    rng: &mut R,
) -> Result<(AdjacencyState, ObservationMask)> {
    task.validate()?;
    let a = g.adjacency();
    let n = a.n();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();

    match task.kind {
        TaskKind::LinkPrediction => {
            let count = rate_count(task.rate, pairs.len());
            if count == 0 {
                return Err(PifmError::Config(format!(
                    "rate {} hides no pair of graph {} ({} pairs)",
                    task.rate,
                    g.graph_id,
                    pairs.len()
                )));
            }
            let hidden: Vec<(usize, usize)> = sample_sorted(rng, pairs.len(), count)
                .into_iter()
                .map(|k| pairs[k])
                .collect();
            let xi = ObservationMask::from_hidden_pairs(n, &hidden)?;
            let obs = a.matrix().zip_map(xi.matrix(), |v, m| v * m)?;
            Ok((AdjacencyState::from_matrix_unchecked(obs), xi))
        }
        TaskKind::Expansion => {
            let edges = a.edges();
            let drop = rate_count(task.rate, edges.len());
            if drop == 0 {
                return Err(PifmError::Config(format!(
                    "rate {} drops no edge of graph {} ({} edges)",
                    task.rate,
                    g.graph_id,
                    edges.len()
                )));
            }
            let dropped = sample_sorted(rng, edges.len(), drop);
            let mut keep = vec![true; edges.len()];
            for k in dropped {
                keep[k] = false;
            }
            let kept: Vec<(usize, usize)> = edges
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&e, _)| e)
                .collect();
            let obs = AdjacencyState::from_edges(n, &kept)?;
            let mut m = obs.matrix().clone();
            for i in 0..n {
                m[(i, i)] = 1.0;
            }
            Ok((obs, ObservationMask::from_matrix(m)?))
        }
        TaskKind::Denoising => {
            let zeros: Vec<(usize, usize)> =
                pairs.iter().copied().filter(|&(i, j)| a.get(i, j) == 0.0).collect();
            let flips = rate_count(task.rate, zeros.len());
            if flips == 0 {
                return Err(PifmError::Config(format!(
                    "rate {} flips no zero entry of graph {} ({} zeros)",
                    task.rate,
                    g.graph_id,
                    zeros.len()
                )));
            }
            let mut m = a.matrix().clone();
            for k in sample_sorted(rng, zeros.len(), flips) {
                let (i, j) = zeros[k];
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
            }
            let obs = AdjacencyState::from_matrix_unchecked(m);
            let hidden = obs.edges();
            let xi = ObservationMask::from_hidden_pairs(n, &hidden)?;
            Ok((obs, xi))
        }
    }
}

// ---------------------------------------------------------------------------
// Graphons
// ---------------------------------------------------------------------------

/// A graphon `W: [0,1]^2 -> [0,1]` stored on an `R x R` grid, read back by
/// nearest cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphonGrid {
    values: Matrix,
}

pub const DEFAULT_GRAPHON_RESOLUTION: usize = 64;

impl GraphonGrid {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_square() || values.rows() == 0 {
            return Err(PifmError::dim(
                "GraphonGrid::new",
                format!("grid must be square and nonempty, got {:?}", values.shape()),
            ));
        }
        let r = values.rows();
        for i in 0..r {
            for j in 0..r {
                let v = values[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(PifmError::Range(format!("graphon cell ({i},{j}) = {v}")));
                }
                if v != values[(j, i)] {
                    return Err(PifmError::Range(format!("asymmetric graphon cell ({i},{j})")));
                }
            }
        }
        Ok(GraphonGrid { values })
    }

    pub fn constant(resolution: usize, c: f64) -> Result<Self> {
        GraphonGrid::new(Matrix::filled(resolution, resolution, c))
    }

    /// Evaluates `f` at cell centers.
    pub fn from_fn(resolution: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let r = resolution as f64;
        let mut m = Matrix::from_fn(resolution, resolution, |i, j| {
            f((i as f64 + 0.5) / r, (j as f64 + 0.5) / r)
        });
        // Symmetrize exactly in case `f` is only symmetric up to rounding.
        for i in 0..resolution {
            for j in (i + 1)..resolution {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        GraphonGrid::new(m)
    }

    pub fn resolution(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    #[inline]
    pub fn cell(&self, z: f64) -> usize {
        let r = self.resolution();
        ((z * r as f64).floor().max(0.0) as usize).min(r - 1)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.values[(self.cell(x), self.cell(y))]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.resolution() {
            let row: Vec<String> = self.values.row(i).iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| PifmError::Parse {
                path: PathBuf::from("<graphon csv>"),
                line: k + 1,
                msg: e.to_string(),
            })?);
        }
        GraphonGrid::new(Matrix::from_rows(&rows)?)
    }
}

/// Draws `z_i ~ U[0,1]` and `A_ij ~ Bernoulli(W(z_i, z_j))` for `i < j`.
pub fn sample_graphon_graph<R: Rng + ?Sized>(
    w: &GraphonGrid,
    n: usize,
    graph_id: usize,
    rng: &mut R,
) -> Result<GraphRecord> {
    if n < 2 {
        return Err(PifmError::Config(format!("graphon sample needs n >= 2, got {n}")));
    }
    let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < w.eval(z[i], z[j]) {
                edges.push((i, j));
            }
        }
    }
    GraphRecord::new(graph_id, AdjacencyState::from_edges(n, &edges)?)
}

/// Named generators for synthetic datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphonFamily {
    Constant { p: f64 },
    /// `W(x, y) = x * y`.
    Product,
    /// Blocks split at `split`; `p_in` on the diagonal blocks, `p_out` elsewhere.
    TwoBlock { p_in: f64, p_out: f64, split: f64 },
}

impl GraphonFamily {
    pub fn grid(&self, resolution: usize) -> Result<GraphonGrid> {
        match *self {
            GraphonFamily::Constant { p } => GraphonGrid::constant(resolution, p),
            GraphonFamily::Product => GraphonGrid::from_fn(resolution, |x, y| x * y),
            GraphonFamily::TwoBlock { p_in, p_out, split } => {
                GraphonGrid::from_fn(resolution, |x, y| {
                    if (x < split) == (y < split) {
                        p_in
                    } else {
                        p_out
                    }
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: GraphonFamily,
    pub n_graphs: usize,
    pub n_nodes: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    DEFAULT_GRAPHON_RESOLUTION
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<Vec<GraphRecord>> {
        let w = self.family.grid(self.resolution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.n_graphs)
            .map(|gid| sample_graphon_graph(&w, self.n_nodes, gid, &mut rng))
            .collect()
    }
}
