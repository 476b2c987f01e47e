use rand::Rng;

use crate::graph::AdjacencyState;

/// Second-order (node2vec) random walks.
///
/// From `cur`, having arrived from `prev`, a neighbor `x` of `cur` is chosen
/// with weight `1/p` if `x == prev`, `1` if `x` is adjacent to `prev`, and
/// `1/q` otherwise. The first step of a walk is uniform. Walks stop early at
/// isolated nodes, so an isolated start yields a length-1 walk.
///
/// Walks are emitted pass by pass: `walks_per_node` passes, each starting
/// once from every node in index order.
pub fn random_walks<R: Rng + ?Sized>(
    a_obs: &AdjacencyState,
    walks_per_node: usize,
    length: usize,
    p: f64,
    q: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    assert!(p > 0.0 && q > 0.0, "node2vec p and q must be positive");
    let n = a_obs.n();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|i| a_obs.neighbors(i)).collect();
    let mut walks = Vec::with_capacity(walks_per_node * n);
    let mut weights = Vec::new();
    for _ in 0..walks_per_node {
        for start in 0..n {
            let mut walk = Vec::with_capacity(length);
            walk.push(start);
            while walk.len() < length {
                let cur = *walk.last().unwrap();
                let options = &nbrs[cur];
                if options.is_empty() {
                    break;
                }
                let next = if walk.len() == 1 {
                    options[rng.random_range(0..options.len())]
                } else {
                    let prev = walk[walk.len() - 2];
                    weights.clear();
                    weights.extend(options.iter().map(|&x| {
                        if x == prev {
                            1.0 / p
                        } else if a_obs.get(prev, x) != 0.0 {
                            1.0
                        } else {
                            1.0 / q
                        }
                    }));
                    options[sample_index(&weights, rng)]
                };
                walk.push(next);
            }
            walks.push(walk);
        }
    }
    walks
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge_alternates() {
        let a = AdjacencyState::from_edges(2, &[(0, 1)]).unwrap();
        let walks = random_walks(&a, 3, 9, 0.7, 2.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(walks.len(), 6);
        for w in walks {
            assert_eq!(w.len(), 9);
            for pair in w.windows(2) {
                assert_ne!(pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn isolated_nodes_give_length_one_walks() {
        let a = AdjacencyState::from_edges(3, &[(0, 1)]).unwrap();
        let walks = random_walks(&a, 2, 5, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        for w in walks.iter().filter(|w| w[0] == 2) {
            assert_eq!(w, &vec![2]);
        }
    }

    #[test]
    fn unbiased_walk_is_uniform_over_neighbors() {
        // Star centre 0 with leaves 1..=4 plus a leaf-leaf edge 1-2. With
        // p = q = 1 each step from 0 is uniform over its 4 neighbors.
        let a = AdjacencyState::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let walks = random_walks(&a, 4000, 12, 1.0, 1.0, &mut rng);
        let mut counts = [0usize; 5];
        let mut total = 0usize;
        for w in &walks {
            for pair in w.windows(2).skip(1) {
                if pair[0] == 0 {
                    counts[pair[1]] += 1;
                    total += 1;
                }
            }
        }
        for &c in &counts[1..] {
            let f = c as f64 / total as f64;
            assert!((f - 0.25).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn triangle_return_frequency_matches_exact_transition() {
        let a = AdjacencyState::complete(3);
        let (p, q) = (0.1, 10.0);
        // Exact oracle: from cur (arrived from prev) the candidates are prev
        // (weight 1/p) and the third node, adjacent to prev (weight 1).
        let exact = (1.0 / p) / (1.0 / p + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut returns = 0usize;
        let mut steps = 0usize;
        while steps < 100_000 {
            for w in random_walks(&a, 1, 101, p, q, &mut rng) {
                for t in 2..w.len() {
                    if w[t] == w[t - 2] {
                        returns += 1;
                    }
                    steps += 1;
                }
            }
        }
        let f = returns as f64 / steps as f64;
        assert!((f - exact).abs() <= 0.01, "{f} vs {exact}");
    }
}
