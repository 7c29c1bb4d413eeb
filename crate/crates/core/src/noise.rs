//! Cross-class edge injection and the replayable noisy edge-list format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{build_graph, dense_id_map, parse_edge_lines};
use crate::error::{DatasetError, NoiseError};
use crate::graph::Graph;

/// A graph after noise injection.
///
/// `graph.edges()` lists the clean edges first, in their original order,
/// followed by the injected edges in draw order; `real_mask` is aligned
/// with that list.
#[derive(Clone, Debug)]
pub struct NoisyGraph {
    pub graph: Graph,
    pub real_mask: Vec<bool>,
    pub clean_graph: Graph,
}

impl NoisyGraph {
    pub fn n_injected(&self) -> usize {
        self.real_mask.iter().filter(|&&r| !r).count()
    }

    /// Fraction of real edges, the expected precision of a random ranking.
    pub fn real_fraction(&self) -> f64 {
        let real = self.real_mask.iter().filter(|&&r| r).count();
        real as f64 / self.real_mask.len().max(1) as f64
    }

    /// Renders the edge list as `u v real` lines using the given node ids.
    pub fn to_edge_list(&self, node_ids: &[u64]) -> String {
        let mut out = String::from("# u v real\n");
        for (&(i, j), &real) in self.graph.edges().iter().zip(&self.real_mask) {
            writeln!(out, "{} {} {}", node_ids[i], node_ids[j], u8::from(real)).unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, node_ids: &[u64]) -> std::io::Result<()> {
        std::fs::write(path, self.to_edge_list(node_ids))
    }

    /// Reads a file produced by [`NoisyGraph::write`] for a graph with `n_nodes` nodes.
    pub fn read(path: impl AsRef<Path>, n_nodes: usize) -> Result<(Self, Vec<u64>), DatasetError> {
        let path = path.as_ref();
        let lines = parse_edge_lines(path)?;
        let mut real_mask = Vec::with_capacity(lines.len());
        for (line, _, _, flag) in &lines {
            real_mask.push(match flag.as_deref() {
                Some("1") => true,
                Some("0") => false,
                other => {
                    return Err(DatasetError::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message: format!("expected a 0/1 real flag, found {other:?}"),
                    })
                }
            });
        }
        let (map, ids) = dense_id_map(lines.iter().flat_map(|l| [l.1, l.2]), n_nodes)?;
        let graph = build_graph(path, &lines, &map, n_nodes)?;
        let clean_edges: Vec<_> = graph
            .edges()
            .iter()
            .zip(&real_mask)
            .filter_map(|(&e, &r)| r.then_some(e))
            .collect();
        let clean_graph = Graph::new(n_nodes, clean_edges)?;
        Ok((
            Self {
                graph,
                real_mask,
                clean_graph,
            },
            ids,
        ))
    }
}

/// Number of injected edges for a given ratio; half-way cases round away from zero.
pub fn noise_edge_count(n_edges: usize, ratio: f64) -> usize {
    (ratio * n_edges as f64).round() as usize
}

/// Adds `round(ratio * |E|)` distinct non-edges whose endpoints carry different labels.
///
/// Pairs are drawn uniformly by seeded rejection sampling. When the request
/// covers more than half of the candidate pool the pool is enumerated and a
/// seeded partial shuffle is used instead, so dense requests still finish.
pub fn inject_noise(graph: &Graph, labels: &[usize], ratio: f64, seed: u64) -> Result<NoisyGraph, NoiseError> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(NoiseError::InvalidRatio(ratio));
    }
    let n = graph.n_nodes();
    if labels.len() != n {
        return Err(NoiseError::LabelMismatch {
            labels: labels.len(),
            nodes: n,
        });
    }
    let requested = noise_edge_count(graph.n_edges(), ratio);
    let available = cross_class_pairs(labels) - graph.edges().iter().filter(|&&(i, j)| labels[i] != labels[j]).count();
    if requested > available {
        return Err(NoiseError::InsufficientCandidates { requested, available });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = if requested * 2 <= available {
        let mut chosen = HashSet::with_capacity(requested);
        let mut order = Vec::with_capacity(requested);
        while order.len() < requested {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || labels[i] == labels[j] || graph.has_edge(i, j) {
                continue;
            }
            let e = (i.min(j), i.max(j));
            if chosen.insert(e) {
                order.push(e);
            }
        }
        order
    } else {
        let mut pool = Vec::with_capacity(available);
        for i in 0..n {
            for j in (i + 1)..n {
                if labels[i] != labels[j] && !graph.has_edge(i, j) {
                    pool.push((i, j));
                }
            }
        }
        for k in 0..requested {
            let pick = rng.random_range(k..pool.len());
            pool.swap(k, pick);
        }
        pool.truncate(requested);
        pool
    };

    let mut real_mask = vec![true; graph.n_edges()];
    real_mask.extend(std::iter::repeat_n(false, injected.len()));
    let noisy = Graph::new(n, graph.edges().iter().copied().chain(injected)).expect("injected edges are new and simple");
    Ok(NoisyGraph {
        graph: noisy,
        real_mask,
        clean_graph: graph.clone(),
    })
}

fn cross_class_pairs(labels: &[usize]) -> usize {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len();
    let same: usize = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    n * n.saturating_sub(1) / 2 - same
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Graph {
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap()
    }

    #[test]
    fn injects_rounded_count_of_cross_class_edges() {
        let g = ring(10);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let noisy = inject_noise(&g, &labels, 0.3, 7).unwrap();
        assert_eq!(noisy.n_injected(), 3);
        assert_eq!(noisy.graph.n_edges(), 13);
        for (&(i, j), &real) in noisy.graph.edges().iter().zip(&noisy.real_mask) {
            if !real {
                assert_ne!(labels[i], labels[j]);
                assert!(!g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn same_seed_same_edges() {
        let g = ring(30);
        let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
        let a = inject_noise(&g, &labels, 0.6, 1).unwrap();
        let b = inject_noise(&g, &labels, 0.6, 1).unwrap();
        let c = inject_noise(&g, &labels, 0.6, 2).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_ne!(a.graph.edges(), c.graph.edges());
    }

    #[test]
    fn empty_candidate_pool_is_an_error() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let err = inject_noise(&g, &[0, 0, 0], 1.0, 0).unwrap_err();
        assert_eq!(err, NoiseError::InsufficientCandidates { requested: 1, available: 0 });
        assert!(err.to_string().contains("shortfall 1"));
    }

    #[test]
    fn dense_requests_use_the_enumerated_pool() {
        // complete bipartite candidate pool of 4 pairs, all requested
        let g = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
        let noisy = inject_noise(&g, &[0, 0, 1, 1], 2.0, 5).unwrap();
        assert_eq!(noisy.n_injected(), 4);
    }

    #[test]
    fn zero_ratio_keeps_graph() {
        let g = ring(6);
        let noisy = inject_noise(&g, &[0, 1, 0, 1, 0, 1], 0.0, 0).unwrap();
        assert_eq!(noisy.graph.edges(), g.edges());
        assert!(noisy.real_mask.iter().all(|&r| r));
    }

    #[test]
    fn edge_list_roundtrip() {
        let g = ring(12);
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let noisy = inject_noise(&g, &labels, 0.5, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noisy.txt");
        let ids: Vec<u64> = (0..12).collect();
        noisy.write(&path, &ids).unwrap();
        let (back, back_ids) = NoisyGraph::read(&path, 12).unwrap();
        assert_eq!(back_ids, ids);
        assert_eq!(back.graph.edges(), noisy.graph.edges());
        assert_eq!(back.real_mask, noisy.real_mask);
        assert_eq!(back.clean_graph.edges(), g.edges());
    }
}
