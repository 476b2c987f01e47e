use crate::error::{PifmError, Result};
use crate::graph::{AdjacencyState, NodePermutation};
use crate::linalg::Matrix;
use crate::priors::sgns::NodeEmbeddings;

const POWER_ITERS: usize = 500;
/// Projections closer than this are treated as ties.
const TIE_TOL: f64 = 1e-9;

/// Orders nodes by their projection on the first principal component of
/// `emb`. The component's sign is chosen so the projections have a
/// nonnegative third moment. Ties fall back to degree, then index. Zero
/// variance yields plain degree-then-index order.
///
/// Returned permutation maps node `i` to its canonical position.
pub fn canonicalize(emb: &NodeEmbeddings, degrees: &[f64]) -> Result<NodePermutation> {
    let n = emb.n();
    if degrees.len() != n {
        return Err(PifmError::dim(
            "canonicalize",
            format!("{n} embeddings vs {} degrees", degrees.len()),
        ));
    }
    let proj = first_component_projection(emb);
    let key = |i: usize| (proj[i] / TIE_TOL).round();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        key(a)
            .total_cmp(&key(b))
            .then(degrees[a].total_cmp(&degrees[b]))
            .then(a.cmp(&b))
    });
    NodePermutation::from_order(&order)
}

/// Projection of centred rows on PC1; all zeros when the embeddings have no
/// spread.
fn first_component_projection(emb: &NodeEmbeddings) -> Vec<f64> {
    let (n, d) = (emb.n(), emb.dim());
    if n == 0 || d == 0 {
        return vec![0.0; n];
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(emb.row(i)) {
            *m += v / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| emb.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for row in &centred {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
    if trace <= 1e-24 {
        return vec![0.0; n];
    }
    // Start from the diagonal of the covariance; any vector depending only on
    // the covariance keeps the result independent of node order.
    let mut v: Vec<f64> = (0..d).map(|a| cov[a * d + a] + 1e-3 * trace * (a + 1) as f64 / d as f64).collect();
    normalize(&mut v);
    for _ in 0..POWER_ITERS {
        let mut next = vec![0.0; d];
        for a in 0..d {
            next[a] = (0..d).map(|b| cov[a * d + b] * v[b]).sum();
        }
        if normalize(&mut next) == 0.0 {
            break;
        }
        let delta: f64 = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).sum();
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    let mut proj: Vec<f64> = centred
        .iter()
        .map(|row| row.iter().zip(&v).map(|(x, y)| x * y).sum())
        .collect();
    let skew: f64 = proj.iter().map(|p| p * p * p).sum();
    if skew < 0.0 {
        proj.iter_mut().for_each(|p| *p = -*p);
    }
    proj
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Permutation-invariant node descriptors used to fix a canonical order before
/// any order-dependent computation: degree, mean neighbor degree and local
/// triangle count.
pub fn structural_embeddings(a: &AdjacencyState) -> NodeEmbeddings {
    let n = a.n();
    let deg = a.degrees();
    let m = a.matrix();
    let mut out = Matrix::zeros(n, 3);
    for i in 0..n {
        let nb = a.neighbors(i);
        if !nb.is_empty() {
            out[(i, 1)] = nb.iter().map(|&j| deg[j]).sum::<f64>() / nb.len() as f64;
        }
        for (x, &j) in nb.iter().enumerate() {
            for &k in &nb[x + 1..] {
                out[(i, 2)] += m[(j, k)];
            }
        }
        out[(i, 0)] = deg[i];
    }
    NodeEmbeddings::new(out).expect("structural features are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_node_is_identity() {
        let emb = NodeEmbeddings::new(Matrix::filled(1, 4, 0.3)).unwrap();
        assert_eq!(canonicalize(&emb, &[0.0]).unwrap(), NodePermutation::identity(1));
    }

    #[test]
    fn sorted_along_pc1_is_identity() {
        // Points on a line with positive skew so the sign convention keeps
        // the ascending direction.
        let xs = [-1.0, -0.8, -0.6, -0.4, 2.8];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 0.5 * x]).collect();
        let emb = NodeEmbeddings::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(canonicalize(&emb, &[0.0; 5]).unwrap(), NodePermutation::identity(5));
    }

    #[test]
    fn canonical_order_survives_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let emb = Matrix::from_fn(n, 5, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let deg: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
            let base = canonicalize(&NodeEmbeddings::new(emb.clone()).unwrap(), &deg).unwrap();
            let p = NodePermutation::random(n, &mut rng);
            let pemb = NodeEmbeddings::new(p.permute_rows(&emb).unwrap()).unwrap();
            let pdeg = p.permute_vec(&deg);
            let perm = canonicalize(&pemb, &pdeg).unwrap();
            // Node i sits at p(i) in the relabeled copy.
            for i in 0..n {
                assert_eq!(perm.apply(p.apply(i)), base.apply(i));
            }
        }
    }

    #[test]
    fn zero_variance_uses_degree_then_index() {
        let emb = NodeEmbeddings::new(Matrix::filled(4, 3, 1.0)).unwrap();
        let perm = canonicalize(&emb, &[2.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(perm.mapping(), &[2, 1, 3, 0]);
    }
}
