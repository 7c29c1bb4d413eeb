//! Exhaustive checks over all deterministic assignments of tiny graphs.

use ndarray::{Array2, ArrayView2};

use super::metrics::{one_hot, HardAssignment};
use crate::cluster::{full_modularity_loss, PairCoefficients};
use crate::error::EvalError;
use crate::graph::Graph;

/// Upper bound on the number of assignments any enumeration may visit.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;
/// Values this close to the optimum count as optimal.
pub const OPTIMUM_TOLERANCE: f64 = 1e-12;

fn guard(n: usize, k: usize, per_node: u64) -> Result<(), EvalError> {
    let mut total: u64 = 1;
    for _ in 0..n {
        total = total.saturating_mul(per_node);
        if total > ENUMERATION_LIMIT {
            return Err(EvalError::EnumerationLimit {
                n,
                k,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(())
}

/// Every map from `N` nodes to `K` clusters, first node varying fastest.
#[derive(Clone, Debug)]
pub struct Assignments {
    next: Option<Vec<usize>>,
    k: usize,
}

impl Iterator for Assignments {
    type Item = HardAssignment;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.next.take()?;
        let mut successor = current.clone();
        for slot in successor.iter_mut() {
            *slot += 1;
            if *slot < self.k {
                self.next = Some(successor);
                return Some(current);
            }
            *slot = 0;
        }
        Some(current)
    }
}

pub fn enumerate_assignments(n: usize, k: usize) -> Result<Assignments, EvalError> {
    if k == 0 {
        return Err(EvalError::Empty);
    }
    guard(n, k, k as u64)?;
    Ok(Assignments {
        next: Some(vec![0; n]),
        k,
    })
}

/// `Pr(P = P*) = prod_i P[i, S(i; P*)]`.
pub fn assignment_probability(p: ArrayView2<f64>, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &c)| p[[i, c]]).product()
}

/// `sum_{P*} Pr(P = P*) f(P*)`.
pub fn expected_hard_value(p: ArrayView2<f64>, f: impl Fn(&[usize]) -> f64) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for a in enumerate_assignments(p.nrows(), p.ncols())? {
        let pr = assignment_probability(p, &a);
        if pr != 0.0 {
            total += pr * f(&a);
        }
    }
    Ok(total)
}

/// `|f(P) - sum_{P*} Pr(P = P*) f(P*)|`.
pub fn expectation_conforming_gap<F>(loss: F, p: ArrayView2<f64>, graph: &Graph) -> Result<f64, EvalError>
where
    F: Fn(ArrayView2<f64>, &Graph) -> f64,
{
    let k = p.ncols();
    let expected = expected_hard_value(p, |a| loss(one_hot(a, k).view(), graph))?;
    Ok((loss(p, graph) - expected).abs())
}

/// The decomposed negated modularity, self pairs counted as always co-clustered.
pub fn modularity_loss(p: ArrayView2<f64>, graph: &Graph) -> f64 {
    full_modularity_loss(p, graph)
}

/// `sum_{i,j} c_ij (P_i · P_j)` with the self pair read literally as `P_i · P_i`.
///
/// Agrees with [`modularity_loss`] on hard assignments but not on soft ones.
pub fn literal_modularity_loss(p: ArrayView2<f64>, graph: &Graph) -> f64 {
    let rows: Vec<usize> = (0..graph.n_nodes()).collect();
    let coeffs = PairCoefficients::new(graph, &rows).expect("rows in range");
    let self_dot: f64 = rows
        .iter()
        .map(|&i| coeffs.self_pairs[[i, i]] * (p.row(i).dot(&p.row(i)) - 1.0))
        .sum();
    full_modularity_loss(p, graph) + self_dot
}

/// `-Tr(P^T A P) / Tr(P^T D P)`; zero when the denominator vanishes.
pub fn normalized_cut_loss(p: ArrayView2<f64>, graph: &Graph) -> f64 {
    let num: f64 = graph.edges().iter().map(|&(i, j)| 2.0 * p.row(i).dot(&p.row(j))).sum();
    let den: f64 = (0..graph.n_nodes())
        .map(|i| graph.degree(i) as f64 * p.row(i).dot(&p.row(i)))
        .sum();
    if den == 0.0 {
        0.0
    } else {
        -num / den
    }
}

/// Closed forms on the one-edge, two-node graph with `K = 2`: the direct
/// value `-2 P1·P2 / (P1·P1 + P2·P2)` and the expectation `-P1·P2`.
pub fn normalized_cut_two_node_closed_forms(p1: [f64; 2], p2: [f64; 2]) -> (f64, f64) {
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
    (-2.0 * dot(p1, p2) / (dot(p1, p1) + dot(p2, p2)), -dot(p1, p2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub best: f64,
    /// Every assignment within [`OPTIMUM_TOLERANCE`] of the optimum, relabelings included.
    pub argbest: Vec<HardAssignment>,
}

pub fn bruteforce_best<F>(objective: F, graph: &Graph, k: usize, goal: Goal) -> Result<BruteForce, EvalError>
where
    F: Fn(&[usize], &Graph) -> f64,
{
    let values: Vec<(HardAssignment, f64)> = enumerate_assignments(graph.n_nodes(), k)?
        .map(|a| {
            let v = objective(&a, graph);
            (a, v)
        })
        .collect();
    let sign = match goal {
        Goal::Minimize => 1.0,
        Goal::Maximize => -1.0,
    };
    let best = values
        .iter()
        .map(|(_, v)| sign * v)
        .fold(f64::INFINITY, f64::min)
        * sign;
    let argbest = values
        .into_iter()
        .filter(|(_, v)| (v - best).abs() <= OPTIMUM_TOLERANCE)
        .map(|(a, _)| a)
        .collect();
    Ok(BruteForce { best, argbest })
}

/// All probability vectors of length `k` whose entries are multiples of `1/steps`.
pub fn simplex_grid(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn fill(k: usize, left: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() + 1 == k {
            prefix.push(left);
            out.push(prefix.iter().map(|&c| c as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            fill(k, left - c, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        fill(k, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

/// Outcome of minimizing a relaxed loss over a dense grid of soft assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMinimum {
    pub soft_min: f64,
    pub hard_min: f64,
    /// Grid points within [`OPTIMUM_TOLERANCE`] of `soft_min`.
    pub n_minimizers: usize,
    /// Hard assignments with probability above `support_threshold` under some
    /// soft minimizer that are not themselves optimal.
    pub violations: usize,
}

impl GridMinimum {
    /// The soft optimum equals the hard one and no minimizer puts mass on a suboptimal hard assignment.
    pub fn holds(&self) -> bool {
        (self.soft_min - self.hard_min).abs() <= OPTIMUM_TOLERANCE && self.violations == 0
    }
}

/// Minimizes `loss` over every soft `P` whose rows lie on the `steps` simplex
/// grid, then checks each minimizer's support against the brute-force optimum.
pub fn grid_minimum_check<F>(loss: F, graph: &Graph, k: usize, steps: usize, support_threshold: f64) -> Result<GridMinimum, EvalError>
where
    F: Fn(ArrayView2<f64>, &Graph) -> f64,
{
    let n = graph.n_nodes();
    let grid = simplex_grid(k, steps);
    guard(n, k, grid.len() as u64)?;
    let hard = bruteforce_best(|a, g| loss(one_hot(a, k).view(), g), graph, k, Goal::Minimize)?;

    let mut idx = vec![0usize; n];
    let mut p = Array2::zeros((n, k));
    let mut minimizers: Vec<Array2<f64>> = Vec::new();
    let mut soft_min = f64::INFINITY;
    loop {
        for (i, &g) in idx.iter().enumerate() {
            p.row_mut(i).iter_mut().zip(&grid[g]).for_each(|(dst, &v)| *dst = v);
        }
        let value = loss(p.view(), graph);
        if value < soft_min - OPTIMUM_TOLERANCE {
            soft_min = value;
            minimizers.clear();
        }
        if (value - soft_min).abs() <= OPTIMUM_TOLERANCE {
            soft_min = soft_min.min(value);
            minimizers.push(p.clone());
        }
        let mut pos = 0;
        while pos < n {
            idx[pos] += 1;
            if idx[pos] < grid.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }

    let mut violations = 0;
    for m in &minimizers {
        for a in enumerate_assignments(n, k)? {
            if assignment_probability(m.view(), &a) > support_threshold && !hard.argbest.contains(&a) {
                violations += 1;
            }
        }
    }
    Ok(GridMinimum {
        soft_min,
        hard_min: hard.best,
        n_minimizers: minimizers.len(),
        violations,
    })
}
