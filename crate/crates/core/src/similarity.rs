//! Adamic-Adar similarity on the edges of a graph.

use std::collections::HashMap;

use crate::graph::Graph;

/// Adamic-Adar scores for every edge of a graph, keyed symmetrically.
#[derive(Clone, Debug)]
pub struct PairSimilarity {
    scores: Vec<f64>,
    index: HashMap<(usize, usize), usize>,
}

impl PairSimilarity {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.index.get(&(i.min(j), i.max(j))).map(|&k| self.scores[k])
    }

    /// Scores aligned with `graph.edges()`.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// `S_ij = sum over common neighbours u of 1 / ln(d_u)`, for each edge `(i, j)`.
///
/// A common neighbour of two distinct nodes has degree at least two, so the
/// logarithm is always positive.
pub fn adamic_adar(graph: &Graph) -> PairSimilarity {
    let mut scores = Vec::with_capacity(graph.n_edges());
    let mut index = HashMap::with_capacity(graph.n_edges());
    for (k, &(i, j)) in graph.edges().iter().enumerate() {
        scores.push(common_neighbor_score(graph, i, j));
        index.insert((i, j), k);
    }
    PairSimilarity { scores, index }
}

fn common_neighbor_score(graph: &Graph, i: usize, j: usize) -> f64 {
    let (a, b) = (graph.neighbors(i), graph.neighbors(j));
    let (mut p, mut q) = (0, 0);
    let mut score = 0.0;
    while p < a.len() && q < b.len() {
        match a[p].cmp(&b[q]) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                score += 1.0 / (graph.degree(a[p]) as f64).ln();
                p += 1;
                q += 1;
            }
        }
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(graph: &Graph, i: usize, j: usize) -> f64 {
        (0..graph.n_nodes())
            .filter(|&u| graph.has_edge(u, i) && graph.has_edge(u, j))
            .map(|u| 1.0 / (graph.degree(u) as f64).ln())
            .sum()
    }

    #[test]
    fn path_has_no_common_neighbors() {
        let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let s = adamic_adar(&g);
        assert_eq!(s.get(0, 1), Some(0.0));
        assert_eq!(s.get(2, 1), Some(0.0));
        assert_eq!(s.get(0, 2), None);
    }

    #[test]
    fn triangle_score_is_inverse_log_two() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let s = adamic_adar(&g);
        let expected = 1.0 / 2f64.ln();
        assert!((s.get(0, 1).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.4427).abs() < 1e-4);
    }

    #[test]
    fn barbell_bridge_scores_zero() {
        let g = Graph::new(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).unwrap();
        let s = adamic_adar(&g);
        assert_eq!(s.get(2, 3), Some(0.0));
        // 0 and 1 share node 2, which has degree 3 in the barbell
        assert!((s.get(0, 1).unwrap() - 1.0 / 3f64.ln()).abs() < 1e-15);
    }

    fn random_graph() -> impl Strategy<Value = Graph> {
        (3usize..9)
            .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * (n - 1) / 2)))
            .prop_map(|(n, bits)| {
                let mut edges = Vec::new();
                let mut k = 0;
                for i in 0..n {
                    for j in (i + 1)..n {
                        if bits[k] {
                            edges.push((i, j));
                        }
                        k += 1;
                    }
                }
                Graph::new(n, edges).unwrap()
            })
    }

    proptest! {
        #[test]
        fn matches_definition_and_is_symmetric(g in random_graph()) {
            let s = adamic_adar(&g);
            for &(i, j) in g.edges() {
                let v = s.get(i, j).unwrap();
                prop_assert!(v >= 0.0);
                prop_assert_eq!(s.get(j, i), Some(v));
                prop_assert!((v - brute_force(&g, i, j)).abs() < 1e-12);
            }
        }

        #[test]
        fn edge_deletion_raises_scores_by_at_most_inverse_log_two(g in random_graph(), pick in any::<prop::sample::Index>()) {
            prop_assume!(g.n_edges() > 1);
            let removed = pick.index(g.n_edges());
            let kept: Vec<_> = g.edges().iter().enumerate().filter(|&(k, _)| k != removed).map(|(_, &e)| e).collect();
            let smaller = Graph::new(g.n_nodes(), kept.clone()).unwrap();
            let before = adamic_adar(&g);
            let after = adamic_adar(&smaller);
            for &(i, j) in &kept {
                let gain = after.get(i, j).unwrap() - before.get(i, j).unwrap();
                prop_assert!(gain <= 1.0 / 2f64.ln() + 1e-12);
            }
        }
    }
}
