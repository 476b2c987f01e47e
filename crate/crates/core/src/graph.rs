//! Graph representations shared by every other module: adjacency states,
//! observation masks, node permutations and masked-region access.
//!
//! All matrices are dense. Symmetry and the zero diagonal are checked once at
//! construction and preserved by every operation in this module.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PifmError, Result};
use crate::linalg::Matrix;

/// A symmetric, zero-diagonal `n x n` real matrix.
///
/// Binary states hold ground-truth and observed graphs; real-valued states hold
/// relaxed flow iterates, prior probabilities and predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyState {
    values: Matrix,
    is_binary: bool,
}

impl AdjacencyState {
    pub fn empty(n: usize) -> Self {
        AdjacencyState {
            values: Matrix::zeros(n, n),
            is_binary: true,
        }
    }

    pub fn complete(n: usize) -> Self {
        AdjacencyState {
            values: Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
            is_binary: true,
        }
    }

    /// Validates symmetry (exact) and the zero diagonal.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        if !values.is_square() {
            return Err(PifmError::dim(
                "AdjacencyState::from_matrix",
                format!("non-square {:?}", values.shape()),
            ));
        }
        let n = values.rows();
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(PifmError::Range(format!(
                    "diagonal entry ({i},{i}) = {} must be zero",
                    values[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                if values[(i, j)] != values[(j, i)] {
                    return Err(PifmError::Range(format!(
                        "asymmetric entries at ({i},{j}): {} vs {}",
                        values[(i, j)],
                        values[(j, i)]
                    )));
                }
            }
        }
        let is_binary = values.data().iter().all(|&x| x == 0.0 || x == 1.0);
        Ok(AdjacencyState { values, is_binary })
    }

    /// Callers guarantee the invariants; only checked in debug builds.
    pub(crate) fn from_matrix_unchecked(values: Matrix) -> Self {
        debug_assert!(values.is_square());
        debug_assert!((0..values.rows()).all(|i| values[(i, i)] == 0.0));
        let is_binary = values.data().iter().all(|&x| x == 0.0 || x == 1.0);
        AdjacencyState { values, is_binary }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(PifmError::dim(
                    "AdjacencyState::from_edges",
                    format!("edge ({i},{j}) outside {n} nodes"),
                ));
            }
            if i == j {
                return Err(PifmError::Range(format!("self-loop at node {i}")));
            }
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
        }
        Ok(AdjacencyState {
            values: m,
            is_binary: true,
        })
    }

    /// Builds a state from upper-triangle values in row-major `(i < j)` order.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(PifmError::dim(
                "AdjacencyState::from_upper",
                format!("{} values for {n} nodes", upper.len()),
            ));
        }
        let mut m = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                m[(i, j)] = upper[k];
                m[(j, i)] = upper[k];
                k += 1;
            }
        }
        Ok(AdjacencyState::from_matrix_unchecked(m))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn is_binary(&self) -> bool {
        self.is_binary
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }

    /// Upper-triangle values in row-major `(i < j)` order.
    pub fn upper(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.values[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.values.row(i).iter().sum()).collect()
    }

    /// Entrywise `>= threshold` binarization.
    pub fn threshold(&self, threshold: f64) -> AdjacencyState {
        let n = self.n();
        let m = Matrix::from_fn(n, n, |i, j| {
            if i != j && self.values[(i, j)] >= threshold {
                1.0
            } else {
                0.0
            }
        });
        AdjacencyState {
            values: m,
            is_binary: true,
        }
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.values
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Binary symmetric matrix: 1 = observed node pair, 0 = hidden. The diagonal
/// is always observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMask {
    values: Matrix,
}

impl ObservationMask {
    pub fn all_observed(n: usize) -> Self {
        ObservationMask {
            values: Matrix::filled(n, n, 1.0),
        }
    }

    /// Every off-diagonal pair hidden.
    pub fn all_hidden(n: usize) -> Self {
        ObservationMask {
            values: Matrix::identity(n),
        }
    }

    pub fn from_hidden_pairs(n: usize, hidden: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matrix::filled(n, n, 1.0);
        for &(i, j) in hidden {
            if i >= n || j >= n {
                return Err(PifmError::dim(
                    "ObservationMask::from_hidden_pairs",
                    format!("pair ({i},{j}) outside {n} nodes"),
                ));
            }
            if i == j {
                return Err(PifmError::Range("the diagonal cannot be hidden".into()));
            }
            m[(i, j)] = 0.0;
            m[(j, i)] = 0.0;
        }
        Ok(ObservationMask { values: m })
    }

    pub fn from_matrix(values: Matrix) -> Result<Self> {
        if !values.is_square() {
            return Err(PifmError::dim(
                "ObservationMask::from_matrix",
                format!("non-square {:?}", values.shape()),
            ));
        }
        let n = values.rows();
        for i in 0..n {
            if values[(i, i)] != 1.0 {
                return Err(PifmError::Range(format!(
                    "mask diagonal ({i},{i}) must be 1"
                )));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(PifmError::Range(format!("mask entry ({i},{j}) = {v}")));
                }
                if v != values[(j, i)] {
                    return Err(PifmError::Range(format!("asymmetric mask at ({i},{j})")));
                }
            }
        }
        Ok(ObservationMask { values })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.values[(i, j)] != 0.0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    /// Hidden upper-triangle pairs in row-major order.
    pub fn hidden_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if !self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden_pairs().len()
    }

    pub fn permute(&self, p: &NodePermutation) -> Result<ObservationMask> {
        check_perm(self.n(), p, "ObservationMask::permute")?;
        Ok(ObservationMask {
            values: permute_matrix(&self.values, p),
        })
    }
}

/// A bijection on `{0, .., n-1}`; node `i` moves to position `mapping[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePermutation {
    mapping: Vec<usize>,
}

impl NodePermutation {
    pub fn identity(n: usize) -> Self {
        NodePermutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(PifmError::Range(format!(
                    "mapping {mapping:?} is not a permutation"
                )));
            }
            seen[m] = true;
        }
        Ok(NodePermutation { mapping })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        NodePermutation { mapping }
    }

    /// The permutation that moves `order[k]` to position `k`.
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let mut mapping = vec![usize::MAX; order.len()];
        for (pos, &node) in order.iter().enumerate() {
            if node >= order.len() || mapping[node] != usize::MAX {
                return Err(PifmError::Range(format!("{order:?} is not an ordering")));
            }
            mapping[node] = pos;
        }
        Ok(NodePermutation { mapping })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> NodePermutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        NodePermutation { mapping: inv }
    }

    /// Moves row `i` of `m` to row `p(i)`; used for node feature matrices.
    pub fn permute_rows(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() != self.len() {
            return Err(PifmError::dim(
                "NodePermutation::permute_rows",
                format!("{} rows for a permutation of {}", m.rows(), self.len()),
            ));
        }
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            out.row_mut(self.mapping[i]).copy_from_slice(m.row(i));
        }
        Ok(out)
    }

    /// Moves entry `i` of `v` to position `p(i)`.
    pub fn permute_vec<T: Clone>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.len());
        let mut out = v.to_vec();
        for (i, x) in v.iter().enumerate() {
            out[self.mapping[i]] = x.clone();
        }
        out
    }
}

fn check_perm(n: usize, p: &NodePermutation, op: &'static str) -> Result<()> {
    if p.len() != n {
        return Err(PifmError::dim(
            op,
            format!("permutation of {} applied to {n} nodes", p.len()),
        ));
    }
    Ok(())
}

pub(crate) fn permute_matrix(m: &Matrix, p: &NodePermutation) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let pi = p.apply(i);
        for j in 0..n {
            out[(pi, p.apply(j))] = m[(i, j)];
        }
    }
    out
}

/// Relabels nodes: `result[p(i)][p(j)] == a[i][j]`.
pub fn permute(a: &AdjacencyState, p: &NodePermutation) -> Result<AdjacencyState> {
    check_perm(a.n(), p, "permute")?;
    Ok(AdjacencyState {
        values: permute_matrix(&a.values, p),
        is_binary: a.is_binary,
    })
}

/// `(m + mᵀ)/2` with the diagonal zeroed, optionally clipped to `[lo, hi]`.
pub fn symmetrize_clip(m: &Matrix, clip: Option<(f64, f64)>) -> Result<AdjacencyState> {
    if !m.is_square() {
        return Err(PifmError::dim(
            "symmetrize_clip",
            format!("non-square {:?}", m.shape()),
        ));
    }
    if let Some((lo, hi)) = clip {
        if !(lo <= hi) {
            return Err(PifmError::Config(format!("empty clip range [{lo}, {hi}]")));
        }
    }
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut v = 0.5 * (m[(i, j)] + m[(j, i)]);
            if let Some((lo, hi)) = clip {
                v = v.clamp(lo, hi);
            }
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(AdjacencyState::from_matrix_unchecked(out))
}

/// Upper-triangle `(i, j, value)` triples with `xi[i][j] == 0`, row-major.
pub fn hidden_entries(a: &AdjacencyState, xi: &ObservationMask) -> Result<Vec<(usize, usize, f64)>> {
    if a.n() != xi.n() {
        return Err(PifmError::dim(
            "hidden_entries",
            format!("matrix of {} nodes, mask of {}", a.n(), xi.n()),
        ));
    }
    Ok(xi
        .hidden_pairs()
        .into_iter()
        .map(|(i, j)| (i, j, a.get(i, j)))
        .collect())
}

/// A binary graph with optional node features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub graph_id: usize,
    adjacency: AdjacencyState,
    features: Option<Matrix>,
}

impl GraphRecord {
    pub fn new(graph_id: usize, adjacency: AdjacencyState) -> Result<Self> {
        if !adjacency.is_binary() {
            return Err(PifmError::Range(format!(
                "graph {graph_id}: adjacency must be binary"
            )));
        }
        Ok(GraphRecord {
            graph_id,
            adjacency,
            features: None,
        })
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.adjacency.n() {
            return Err(PifmError::dim(
                "GraphRecord::with_features",
                format!(
                    "{} feature rows for {} nodes",
                    features.rows(),
                    self.adjacency.n()
                ),
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn adjacency(&self) -> &AdjacencyState {
        &self.adjacency
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
}
