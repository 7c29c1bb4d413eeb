use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::EvalError;
use crate::graph::Graph;

/// Cluster index per node.
pub type HardAssignment = Vec<usize>;

/// Row-wise argmax; ties go to the lowest cluster index.
pub fn to_deterministic(p: &Array2<f64>) -> HardAssignment {
    p.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// One-hot `N x K` matrix of a hard assignment.
pub fn one_hot(assignment: &[usize], k: usize) -> Array2<f64> {
    let mut p = Array2::zeros((assignment.len(), k));
    for (i, &c) in assignment.iter().enumerate() {
        p[[i, c]] = 1.0;
    }
    p
}

/// Newman modularity `(1/2m) sum_{i,j same cluster} (A_ij - d_i d_j / 2m)`; zero without edges.
pub fn modularity_metric(assignment: &[usize], graph: &Graph) -> Result<f64, EvalError> {
    if assignment.len() != graph.n_nodes() {
        return Err(EvalError::LengthMismatch {
            left: assignment.len(),
            right: graph.n_nodes(),
        });
    }
    let m = graph.n_edges() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let k = assignment.iter().max().map_or(0, |&c| c + 1);
    let mut internal = vec![0.0; k];
    let mut degree_sum = vec![0.0; k];
    for &(i, j) in graph.edges() {
        if assignment[i] == assignment[j] {
            internal[assignment[i]] += 1.0;
        }
    }
    for (i, &c) in assignment.iter().enumerate() {
        degree_sum[c] += graph.degree(i) as f64;
    }
    Ok(internal
        .iter()
        .zip(&degree_sum)
        .map(|(&e, &d)| e / m - (d / (2.0 * m)).powi(2))
        .sum())
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<(), EvalError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

struct Contingency {
    joint: BTreeMap<(usize, usize), usize>,
    left: BTreeMap<usize, usize>,
    right: BTreeMap<usize, usize>,
    n: usize,
}

impl Contingency {
    fn new(a: &[usize], b: &[usize]) -> Self {
        let mut c = Self {
            joint: BTreeMap::new(),
            left: BTreeMap::new(),
            right: BTreeMap::new(),
            n: a.len(),
        };
        for (&x, &y) in a.iter().zip(b) {
            *c.joint.entry((x, y)).or_default() += 1;
            *c.left.entry(x).or_default() += 1;
            *c.right.entry(y).or_default() += 1;
        }
        c
    }
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the geometric mean of the two entropies.
///
/// Two single-cluster partitions score 1; a single cluster against anything
/// finer scores 0.
pub fn nmi(labels: &[usize], assignment: &[usize]) -> Result<f64, EvalError> {
    check_lengths(labels, assignment)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let c = Contingency::new(labels, assignment);
    let n = c.n as f64;
    let (h_l, h_c) = (entropy(&c.left, n), entropy(&c.right, n));
    if h_l == 0.0 || h_c == 0.0 {
        return Ok(if c.left.len() == 1 && c.right.len() == 1 { 1.0 } else { 0.0 });
    }
    let mi: f64 = c
        .joint
        .iter()
        .map(|(&(x, y), &nxy)| {
            let pxy = nxy as f64 / n;
            pxy * (pxy * n * n / (c.left[&x] as f64 * c.right[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (h_l * h_c).sqrt()).clamp(0.0, 1.0))
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// F1 over unordered node pairs, with "same cluster" as the prediction of "same label".
pub fn pairwise_f1(labels: &[usize], assignment: &[usize]) -> Result<f64, EvalError> {
    check_lengths(labels, assignment)?;
    let c = Contingency::new(labels, assignment);
    let tp: f64 = c.joint.values().map(|&v| pairs(v)).sum();
    if tp == 0.0 {
        return Ok(0.0);
    }
    let same_cluster: f64 = c.right.values().map(|&v| pairs(v)).sum();
    let same_label: f64 = c.left.values().map(|&v| pairs(v)).sum();
    let (fp, fneg) = (same_cluster - tp, same_label - tp);
    Ok(2.0 * tp / (2.0 * tp + fp + fneg))
}
