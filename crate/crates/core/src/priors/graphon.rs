use serde::{Deserialize, Serialize};

use crate::data::GraphonGrid;
use crate::error::Result;
use crate::graph::{AdjacencyState, GraphRecord};
use crate::linalg::Matrix;

pub const SMOOTHING_RADIUS: usize = 1;

/// Histogram graphon estimate plus the degree-quantile inverse map used to
/// place the nodes of a new graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphonPrior {
    pub grid: GraphonGrid,
}

impl GraphonPrior {
    pub fn new(grid: GraphonGrid) -> Self {
        GraphonPrior { grid }
    }

    /// Latent position of each node: its mid-rank degree quantile
    /// `(#{deg < d_i} + #{deg == d_i} / 2) / n`. Nodes of equal degree share
    /// one position, so relabeling nodes only relabels the positions.
    pub fn latent_positions(a: &AdjacencyState) -> Vec<f64> {
        let deg = a.degrees();
        let n = deg.len();
        (0..n)
            .map(|i| {
                let below = deg.iter().filter(|&&d| d < deg[i]).count() as f64;
                let equal = deg.iter().filter(|&&d| d == deg[i]).count() as f64;
                (below + 0.5 * (equal - 1.0) + 0.5) / n as f64
            })
            .collect()
    }

    /// `W(z_i, z_j)` for every pair, zero diagonal.
    pub fn edge_probabilities(&self, a_obs: &AdjacencyState) -> Matrix {
        let z = Self::latent_positions(a_obs);
        let n = z.len();
        Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { self.grid.eval(z[i], z[j]) })
    }
}

/// Places the endpoints of every pair at their degree quantiles, averages
/// adjacency entries per grid cell and smooths sums and counts with a box
/// filter. Cells no graph reaches take the average of their nearest filled
/// neighbors.
///
/// The quantile of node `i` for pair `(i, j)` uses `deg(i) - A_ij`. Sorting
/// by the full degree would let each entry influence its own cell: even for a
/// constant graphon the estimate then drifts below the truth for low ranks
/// and above it for high ranks.
pub fn estimate_histogram_graphon(graphs: &[GraphRecord], resolution: usize) -> Result<GraphonPrior> {
    let r = resolution;
    if r == 0 {
        return Err(crate::error::PifmError::Config("graphon resolution must be positive".into()));
    }
    let mut sums = Matrix::zeros(r, r);
    let mut counts = Matrix::zeros(r, r);
    let grid = GraphonGrid::constant(r, 0.0)?;
    for g in graphs {
        let a = g.adjacency();
        let n = a.n();
        let deg = a.degrees();
        let mut sorted = deg.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile = |x: f64| {
            let below = sorted.partition_point(|&d| d < x) as f64;
            let upto = sorted.partition_point(|&d| d <= x) as f64;
            (below + 0.5 * (upto - below)) / n as f64
        };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let e = a.get(i, j);
                    let (ci, cj) = (grid.cell(quantile(deg[i] - e)), grid.cell(quantile(deg[j] - e)));
                    sums[(ci, cj)] += e;
                    counts[(ci, cj)] += 1.0;
                }
            }
        }
    }
    let sums = box_filter(&sums, SMOOTHING_RADIUS);
    let counts = box_filter(&counts, SMOOTHING_RADIUS);
    let mut values = Matrix::from_fn(r, r, |i, j| {
        if counts[(i, j)] > 0.0 {
            (sums[(i, j)] / counts[(i, j)]).clamp(0.0, 1.0)
        } else {
            f64::NAN
        }
    });
    fill_empty(&mut values);
    // Exact symmetry despite rounding in the filters.
    for i in 0..r {
        for j in (i + 1)..r {
            let v = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(GraphonPrior::new(GraphonGrid::new(values)?))
}

fn box_filter(m: &Matrix, radius: usize) -> Matrix {
    let r = m.rows();
    Matrix::from_fn(r, r, |i, j| {
        let mut s = 0.0;
        for a in i.saturating_sub(radius)..=(i + radius).min(r - 1) {
            for b in j.saturating_sub(radius)..=(j + radius).min(r - 1) {
                s += m[(a, b)];
            }
        }
        s
    })
}

/// Repeatedly replaces NaN cells by the mean of their filled 8-neighbors.
/// With no data at all the grid becomes zero.
fn fill_empty(values: &mut Matrix) {
    let r = values.rows();
    if values.data().iter().all(|v| v.is_nan()) {
        values.data_mut().iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    while values.data().iter().any(|v| v.is_nan()) {
        let prev = values.clone();
        for i in 0..r {
            for j in 0..r {
                if !prev[(i, j)].is_nan() {
                    continue;
                }
                let (mut s, mut c) = (0.0, 0.0);
                for a in i.saturating_sub(1)..=(i + 1).min(r - 1) {
                    for b in j.saturating_sub(1)..=(j + 1).min(r - 1) {
                        if !prev[(a, b)].is_nan() {
                            s += prev[(a, b)];
                            c += 1.0;
                        }
                    }
                }
                if c > 0.0 {
                    values[(i, j)] = s / c;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_graphon_graph;
    use crate::graph::{permute, NodePermutation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn records(adjs: Vec<AdjacencyState>) -> Vec<GraphRecord> {
        adjs.into_iter().enumerate().map(|(k, a)| GraphRecord::new(k, a).unwrap()).collect()
    }

    #[test]
    fn complete_and_empty_training_sets() {
        let full = estimate_histogram_graphon(&records(vec![AdjacencyState::complete(9); 3]), 16).unwrap();
        assert!(full.grid.values().data().iter().all(|&v| v == 1.0));
        let none = estimate_histogram_graphon(&records(vec![AdjacencyState::empty(9); 3]), 16).unwrap();
        assert!(none.grid.values().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_half_graphon_is_recovered() {
        let w = GraphonGrid::constant(64, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let graphs: Vec<GraphRecord> = (0..200)
            .map(|k| sample_graphon_graph(&w, 50, k, &mut rng).unwrap())
            .collect();
        let est = estimate_histogram_graphon(&graphs, 64).unwrap();
        let err = est.grid.values().data().iter().map(|v| (v - 0.5).abs()).sum::<f64>() / (64.0 * 64.0);
        assert!(err <= 0.05, "mean abs cell error {err}");
    }

    #[test]
    fn latent_positions_are_equivariant() {
        let a = AdjacencyState::from_edges(6, &[(0, 1), (1, 2), (2, 3), (1, 4)]).unwrap();
        let z = GraphonPrior::latent_positions(&a);
        let p = NodePermutation::new(vec![3, 5, 0, 1, 4, 2]).unwrap();
        let pz = GraphonPrior::latent_positions(&permute(&a, &p).unwrap());
        assert_eq!(p.permute_vec(&z), pz);
        // Degree-1 nodes 0, 3, 4 tie at ranks 1..3 (plus isolated node 5 at rank 0).
        assert_eq!(z[0], z[3]);
        assert!((z[0] - 2.5 / 6.0).abs() < 1e-15);
    }
}
