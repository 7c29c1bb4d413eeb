//! Undirected, unweighted graphs and the sparse operators derived from them.

use std::collections::HashSet;
use std::sync::Arc;

use ndarray::Array2;

use crate::error::GraphError;

/// An immutable simple undirected graph.
///
/// Edges are stored once as `(i, j)` with `i < j`, in insertion order. The
/// adjacency lists are sorted so that neighbourhood intersections are linear.
#[derive(Clone, Debug)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    edge_set: HashSet<(usize, usize)>,
}

#[inline]
fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl Graph {
    /// Builds a graph, rejecting self-loops, duplicates and out-of-range ids.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut stored = Vec::new();
        let mut edge_set = HashSet::new();
        let mut neighbors = vec![Vec::new(); n_nodes];
        for (i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(GraphError::NodeOutOfRange { node: i.max(j), n_nodes });
            }
            if i == j {
                return Err(GraphError::SelfLoop { node: i });
            }
            let e = ordered(i, j);
            if !edge_set.insert(e) {
                return Err(GraphError::DuplicateEdge { i: e.0, j: e.1 });
            }
            stored.push(e);
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n_nodes,
            edges: stored,
            neighbors,
            edge_set,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(i, j)` with `i < j`, in insertion order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edge_set.contains(&ordered(i, j))
    }

    /// Dense 0/1 adjacency matrix. Only meant for small graphs and tests.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// `D^{-1/2} A D^{-1/2}`; rows of isolated nodes are empty.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let inv_sqrt: Vec<f64> = self
            .neighbors
            .iter()
            .map(|nb| if nb.is_empty() { 0.0 } else { 1.0 / (nb.len() as f64).sqrt() })
            .collect();
        let mut indptr = Vec::with_capacity(self.n_nodes + 1);
        let mut indices = Vec::with_capacity(2 * self.edges.len());
        let mut values = Vec::with_capacity(2 * self.edges.len());
        indptr.push(0);
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                indices.push(j);
                values.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix {
            n_rows: self.n_nodes,
            n_cols: self.n_nodes,
            indptr,
            indices,
            values,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; n_rows + 1];
        for &(r, _, _) in &sorted {
            indptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices: sorted.iter().map(|t| t.1).collect(),
            values: sorted.iter().map(|t| t.2).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, &triplets)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (r, c, v) in self.triplets() {
            out[[r, c]] += v;
        }
        out
    }

    /// `self · dense`.
    pub fn matmul(&self, dense: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, dense.nrows(), "sparse matmul shape mismatch");
        let mut out = Array2::zeros((self.n_rows, dense.ncols()));
        for r in 0..self.n_rows {
            let mut row = out.row_mut(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                row.scaled_add(self.values[k], &dense.row(self.indices[k]));
            }
        }
        out
    }
}

/// A constant sparse linear map together with its adjoint, for use on a tape.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    forward: Arc<SparseMatrix>,
    adjoint: Arc<SparseMatrix>,
}

impl SparseOperator {
    pub fn new(matrix: SparseMatrix) -> Self {
        let adjoint = matrix.transpose();
        Self {
            forward: Arc::new(matrix),
            adjoint: Arc::new(adjoint),
        }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.forward
    }

    pub fn adjoint(&self) -> Self {
        Self {
            forward: Arc::clone(&self.adjoint),
            adjoint: Arc::clone(&self.forward),
        }
    }
}
