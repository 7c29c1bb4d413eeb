//! The clustering model: a skip-connected GCN layer, a linear head and a
//! row softmax, trained on a pairwise-decomposed negated modularity.
//!
//! Pair loss terms are `L_ij = c_ij (P_i · P_j)` with
//! `c_ij = -(1/2|E|)(A_ij - d_i d_j / 2|E|)`. The self pair uses the
//! indicator that a node shares a cluster with itself, so `L_ii = c_ii` is a
//! constant. With that convention the loss is exactly the expected negated
//! modularity of the hard assignment drawn row-wise from `P`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::dataset::Dataset;
use crate::error::ModelError;
use crate::graph::{Graph, SparseOperator};

/// A validated row-stochastic `N x K` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment(Array2<f64>);

impl SoftAssignment {
    pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(p: Array2<f64>) -> Result<Self, ModelError> {
        let (n, k) = p.dim();
        if k < 2 || k > n {
            return Err(ModelError::Config(format!("need 2 <= K <= N, got K={k}, N={n}")));
        }
        for (i, row) in p.rows().into_iter().enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > Self::ROW_SUM_TOLERANCE || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(ModelError::Config(format!("row {i} is not a probability vector (sum {sum})")));
            }
        }
        Ok(Self(p))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn n_clusters(&self) -> usize {
        self.0.ncols()
    }
}

/// Graph-derived inputs shared by every forward pass on one graph.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    pub adjacency: SparseOperator,
    pub attributes: Array2<f64>,
    /// `D^{-1/2} A D^{-1/2} X`, constant because the first layer reads `X`.
    pub propagated: Array2<f64>,
}

impl ModelInputs {
    pub fn new(graph: &Graph, attributes: &Array2<f64>) -> Self {
        let adjacency = SparseOperator::new(graph.normalized_adjacency());
        let propagated = adjacency.matrix().matmul(attributes);
        Self {
            adjacency,
            attributes: attributes.clone(),
            propagated,
        }
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self::new(&dataset.graph, &dataset.attributes)
    }

    pub fn n_nodes(&self) -> usize {
        self.attributes.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.attributes.ncols()
    }
}

/// Uniform fan-in initialisation with bound `gain * sqrt(3 / fan_in)`.
pub(crate) fn init_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Array2<f64> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound))
}

pub const GCN_PROPAGATE: &str = "gcn.w_propagate";
pub const GCN_SKIP: &str = "gcn.w_skip";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Shapes of the clustering model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterModel {
    pub n_features: usize,
    pub hidden: usize,
    pub n_clusters: usize,
}

impl ClusterModel {
    pub fn new(n_features: usize, hidden: usize, n_clusters: usize) -> Self {
        Self {
            n_features,
            hidden,
            n_clusters,
        }
    }

    /// Fresh parameters: both GCN weights `F x h`, head `h x K` plus a zero bias.
    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        ParamSet::new()
            .with(GCN_PROPAGATE, init_uniform(rng, self.n_features, self.hidden, 1.0))
            .with(GCN_SKIP, init_uniform(rng, self.n_features, self.hidden, 1.0))
            .with(HEAD_WEIGHT, init_uniform(rng, self.hidden, self.n_clusters, 1.0))
            .with(HEAD_BIAS, Array2::zeros((1, self.n_clusters)))
    }

    pub fn check_params(&self, w: &ParamSet) -> Result<(), ModelError> {
        let expected = [
            (GCN_PROPAGATE, (self.n_features, self.hidden)),
            (GCN_SKIP, (self.n_features, self.hidden)),
            (HEAD_WEIGHT, (self.hidden, self.n_clusters)),
            (HEAD_BIAS, (1, self.n_clusters)),
        ];
        if w.len() != expected.len() {
            return Err(ModelError::Config(format!("expected 4 clustering parameters, got {}", w.len())));
        }
        for ((name, shape), (actual_name, value)) in expected.iter().zip(w.iter()) {
            if *name != actual_name || value.dim() != *shape {
                return Err(ModelError::Shape {
                    context: "clustering parameters",
                    expected: *shape,
                    actual: value.dim(),
                });
            }
        }
        Ok(())
    }

    /// Records `softmax(SELU(ÂX W1 + X W2) Wh + bh)` and returns the `N x K` node.
    ///
    /// `w` holds the tape variables of the parameters in [`ClusterModel::init`] order.
    pub fn assign_on_tape(&self, tape: &mut Tape, inputs: &ModelInputs, w: &[Var]) -> Var {
        let ax = tape.constant(inputs.propagated.clone());
        let x = tape.constant(inputs.attributes.clone());
        let prop = tape.matmul(ax, w[0]);
        let skip = tape.matmul(x, w[1]);
        let pre = tape.add(prop, skip);
        let hidden = tape.selu(pre);
        let logits = tape.matmul(hidden, w[2]);
        let logits = tape.add_row(logits, w[3]);
        tape.row_softmax(logits)
    }

    pub fn assign(&self, inputs: &ModelInputs, w: &ParamSet) -> Result<SoftAssignment, ModelError> {
        self.check_params(w)?;
        if inputs.n_features() != self.n_features {
            return Err(ModelError::Shape {
                context: "attributes",
                expected: (inputs.n_nodes(), self.n_features),
                actual: inputs.attributes.dim(),
            });
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = w.values().map(|v| tape.constant(v.clone())).collect();
        let p = self.assign_on_tape(&mut tape, inputs, &vars);
        SoftAssignment::new(tape.value(p).clone())
    }
}

/// `SELU(Â H W1 + H W2)` on a tape.
pub fn gcn_layer_on_tape(tape: &mut Tape, adjacency: &SparseOperator, h: Var, w1: Var, w2: Var) -> Var {
    let ah = tape.sparse_left(adjacency, h);
    let prop = tape.matmul(ah, w1);
    let skip = tape.matmul(h, w2);
    let pre = tape.add(prop, skip);
    tape.selu(pre)
}

/// One skip-connected GCN layer, `SELU(D^{-1/2} A D^{-1/2} H W1 + H W2)`.
pub fn gcn_layer(graph: &Graph, h: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
    if h.nrows() != graph.n_nodes() {
        return Err(ModelError::Shape {
            context: "gcn input rows",
            expected: (graph.n_nodes(), h.ncols()),
            actual: h.dim(),
        });
    }
    for w in [w1, w2] {
        if w.nrows() != h.ncols() || w.dim() != w1.dim() {
            return Err(ModelError::Shape {
                context: "gcn weight",
                expected: (h.ncols(), w1.ncols()),
                actual: w.dim(),
            });
        }
    }
    let adjacency = SparseOperator::new(graph.normalized_adjacency());
    let mut tape = Tape::new();
    let (hv, a, b) = (tape.constant(h.clone()), tape.constant(w1.clone()), tape.constant(w2.clone()));
    let out = gcn_layer_on_tape(&mut tape, &adjacency, hv, a, b);
    Ok(tape.value(out).clone())
}

/// Rows of the modularity coefficient matrix, split into the part that
/// multiplies `P_i · P_j` and the constant self-pair part.
#[derive(Clone, Debug)]
pub struct PairCoefficients {
    pub rows: Arc<[usize]>,
    /// `c_ij` for `j != i`, zero at the self position.
    pub off_diagonal: Array2<f64>,
    /// `c_ii` at the self position of each row, zero elsewhere.
    pub self_pairs: Array2<f64>,
}

impl PairCoefficients {
    /// Coefficients for the given rows. An edgeless graph yields all zeros.
    pub fn new(graph: &Graph, rows: &[usize]) -> Result<Self, ModelError> {
        let n = graph.n_nodes();
        let two_m = 2.0 * graph.n_edges() as f64;
        let mut off = Array2::zeros((rows.len(), n));
        let mut diag = Array2::zeros((rows.len(), n));
        if two_m > 0.0 {
            let degrees: Vec<f64> = graph.degrees().into_iter().map(|d| d as f64).collect();
            for (r, &i) in rows.iter().enumerate() {
                if i >= n {
                    return Err(ModelError::RowOutOfRange { row: i, n_nodes: n });
                }
                let scale = degrees[i] / (two_m * two_m);
                let mut row = off.row_mut(r);
                for (c, v) in row.iter_mut().enumerate() {
                    *v = scale * degrees[c];
                }
                for &j in graph.neighbors(i) {
                    row[j] -= 1.0 / two_m;
                }
                diag[[r, i]] = row[i];
                row[i] = 0.0;
            }
        } else if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
            return Err(ModelError::RowOutOfRange { row: bad, n_nodes: n });
        }
        Ok(Self {
            rows: Arc::from(rows),
            off_diagonal: off,
            self_pairs: diag,
        })
    }

    /// The full coefficient rows `c_ij`.
    pub fn full(&self) -> Array2<f64> {
        &self.off_diagonal + &self.self_pairs
    }
}

/// Per-pair loss values for a set of rows.
#[derive(Clone, Debug)]
pub struct PairLossTerms {
    pub rows: Vec<usize>,
    /// `c_ij` for the requested rows and all columns.
    pub coefficients: Array2<f64>,
    /// `L_ij` for the requested rows and all columns.
    pub values: Array2<f64>,
}

impl PairLossTerms {
    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }
}

/// `L_ij = c_ij (P_i · P_j)` for `i` in `rows` and every `j`, with `L_ii = c_ii`.
pub fn pair_loss_terms(p: ArrayView2<f64>, graph: &Graph, rows: &[usize]) -> Result<PairLossTerms, ModelError> {
    if p.nrows() != graph.n_nodes() {
        return Err(ModelError::Shape {
            context: "assignment rows",
            expected: (graph.n_nodes(), p.ncols()),
            actual: p.dim(),
        });
    }
    let coeffs = PairCoefficients::new(graph, rows)?;
    let sub = p.select(Axis(0), rows);
    let gram = sub.dot(&p.t());
    let values = &coeffs.off_diagonal * &gram + &coeffs.self_pairs;
    Ok(PairLossTerms {
        rows: rows.to_vec(),
        coefficients: coeffs.full(),
        values,
    })
}

/// Records the `|rows| x N` matrix of pair loss terms.
pub fn pair_loss_on_tape(tape: &mut Tape, p: Var, coeffs: &PairCoefficients) -> Var {
    let sub = tape.gather_rows(p, &coeffs.rows);
    let pt = tape.transpose(p);
    let gram = tape.matmul(sub, pt);
    let off = tape.constant(coeffs.off_diagonal.clone());
    let weighted = tape.mul(gram, off);
    let diag = tape.constant(coeffs.self_pairs.clone());
    tape.add(weighted, diag)
}

/// `(sqrt(K) / N) ||sum_i P_i|| - 1`.
pub fn collapse_reg(p: ArrayView2<f64>) -> f64 {
    let (n, k) = p.dim();
    let col_sums = p.sum_axis(Axis(0));
    (k as f64).sqrt() / n as f64 * col_sums.dot(&col_sums).sqrt() - 1.0
}

pub fn collapse_reg_on_tape(tape: &mut Tape, p: Var) -> Var {
    let (n, k) = tape.shape(p);
    let cs = tape.col_sum(p);
    let sq = tape.mul(cs, cs);
    let total = tape.sum(sq);
    let norm = tape.sqrt(total);
    tape.affine(norm, (k as f64).sqrt() / n as f64, -1.0)
}

/// `sum_{i in rows} [ sum_j V_ij L_ij + (lambda / N) R ]`.
pub fn weighted_node_loss(terms: &PairLossTerms, weights: ArrayView2<f64>, lambda: f64, reg: f64) -> Result<f64, ModelError> {
    if weights.dim() != terms.values.dim() {
        return Err(ModelError::Shape {
            context: "pair weights",
            expected: terms.values.dim(),
            actual: weights.dim(),
        });
    }
    if let Some(((r, c), &value)) = weights.indexed_iter().find(|(_, &v)| !(v > 0.0)) {
        return Err(ModelError::NonPositiveWeight { row: r, col: c, value });
    }
    let n = terms.n_nodes() as f64;
    Ok((&weights * &terms.values).sum() + terms.rows.len() as f64 * lambda / n * reg)
}

/// `sum_{i in rows} sum_j L_ij`.
pub fn unweighted_node_loss(terms: &PairLossTerms) -> f64 {
    terms.values.sum()
}

/// Records the batch loss. `weights = None` means unit weights.
pub fn node_loss_on_tape(tape: &mut Tape, pair_loss: Var, weights: Option<Var>, reg: Var, lambda: f64) -> Var {
    let (rows, n) = tape.shape(pair_loss);
    let data = match weights {
        Some(v) => {
            let prod = tape.mul(v, pair_loss);
            tape.sum(prod)
        }
        None => tape.sum(pair_loss),
    };
    if lambda == 0.0 {
        return data;
    }
    let penalty = tape.scale(reg, lambda * rows as f64 / n as f64);
    tape.add(data, penalty)
}

/// Sum of all pair terms over every row, in `O(NK + |E|K)`.
///
/// Equals the negated modularity of `P` with the self-pair convention above;
/// on a one-hot `P` it is exactly the negated modularity of that partition.
pub fn full_modularity_loss(p: ArrayView2<f64>, graph: &Graph) -> f64 {
    let two_m = 2.0 * graph.n_edges() as f64;
    if two_m == 0.0 {
        return 0.0;
    }
    let degrees: Vec<f64> = graph.degrees().into_iter().map(|d| d as f64).collect();
    let mut within = 0.0;
    for &(i, j) in graph.edges() {
        within += 2.0 * p.row(i).dot(&p.row(j));
    }
    let mut weighted_sum = ndarray::Array1::<f64>::zeros(p.ncols());
    let mut self_terms = 0.0;
    for (i, row) in p.rows().into_iter().enumerate() {
        weighted_sum.scaled_add(degrees[i], &row);
        self_terms += degrees[i] * degrees[i] * (1.0 - row.dot(&row));
    }
    let null = (weighted_sum.dot(&weighted_sum) + self_terms) / two_m;
    -(within - null) / two_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, ParamSet};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn barbell() -> Graph {
        Graph::new(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).unwrap()
    }

    fn random_soft(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
        let logits = Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0));
        crate::autodiff::row_softmax(&logits)
    }

    fn one_hot(assign: &[usize], k: usize) -> Array2<f64> {
        Array2::from_shape_fn((assign.len(), k), |(i, c)| f64::from(u8::from(assign[i] == c)))
    }

    #[test]
    fn single_cluster_loss_is_zero() {
        let g = barbell();
        let p = Array2::ones((6, 1));
        let rows: Vec<usize> = (0..6).collect();
        let terms = pair_loss_terms(p.view(), &g, &rows).unwrap();
        assert_abs_diff_eq!(unweighted_node_loss(&terms), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(terms.coefficients.sum(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn barbell_triangle_split_scores_minus_five_fourteenths() {
        let g = barbell();
        let p = one_hot(&[0, 0, 0, 1, 1, 1], 2);
        let rows: Vec<usize> = (0..6).collect();
        let terms = pair_loss_terms(p.view(), &g, &rows).unwrap();
        assert_abs_diff_eq!(unweighted_node_loss(&terms), -5.0 / 14.0, epsilon = 1e-12);
        assert_abs_diff_eq!(full_modularity_loss(p.view(), &g), -5.0 / 14.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_terms_are_symmetric() {
        let g = barbell();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_soft(&mut rng, 6, 3);
        for i in 0..6 {
            for j in 0..6 {
                let a = pair_loss_terms(p.view(), &g, &[i]).unwrap().values[[0, j]];
                let b = pair_loss_terms(p.view(), &g, &[j]).unwrap().values[[0, i]];
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn fast_full_loss_matches_dense_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::new(7, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (0, 6), (1, 5)]).unwrap();
        let p = random_soft(&mut rng, 7, 3);
        let rows: Vec<usize> = (0..7).collect();
        let dense = unweighted_node_loss(&pair_loss_terms(p.view(), &g, &rows).unwrap());
        assert_abs_diff_eq!(full_modularity_loss(p.view(), &g), dense, epsilon = 1e-14);
    }

    #[test]
    fn edgeless_graph_has_zero_coefficients() {
        let g = Graph::new(3, []).unwrap();
        let terms = pair_loss_terms(Array2::ones((3, 1)).view(), &g, &[0, 2]).unwrap();
        assert!(terms.values.iter().all(|&v| v == 0.0));
        assert_eq!(full_modularity_loss(Array2::ones((3, 1)).view(), &g), 0.0);
    }

    #[test]
    fn collapse_regularizer_extremes() {
        let k = 4;
        let uniform = Array2::from_elem((10, k), 0.25);
        assert_eq!(collapse_reg(uniform.view()), 0.0);
        let collapsed = one_hot(&[0; 10], k);
        assert_eq!(collapse_reg(collapsed.view()), 1.0);
        let collapsed3 = one_hot(&[2; 5], 3);
        assert_abs_diff_eq!(collapse_reg(collapsed3.view()), 3f64.sqrt() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_loss_properties() {
        let g = barbell();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_soft(&mut rng, 6, 2);
        let rows: Vec<usize> = (0..6).collect();
        let terms = pair_loss_terms(p.view(), &g, &rows).unwrap();
        let ones = Array2::ones((6, 6));
        let unweighted = unweighted_node_loss(&terms);
        assert_abs_diff_eq!(weighted_node_loss(&terms, ones.view(), 0.0, 0.7).unwrap(), unweighted, epsilon = 1e-15);
        let v = Array2::from_shape_fn((6, 6), |_| rng.random_range(0.1..1.0));
        let base = weighted_node_loss(&terms, v.view(), 0.0, 0.0).unwrap();
        let doubled = weighted_node_loss(&terms, (&v * 2.0).view(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(doubled, 2.0 * base, epsilon = 1e-15);

        let zero_terms = PairLossTerms {
            rows: vec![1, 4],
            coefficients: Array2::zeros((2, 6)),
            values: Array2::zeros((2, 6)),
        };
        let r = 0.3;
        let reg_only = weighted_node_loss(&zero_terms, Array2::ones((2, 6)).view(), 1.0, r).unwrap();
        assert_abs_diff_eq!(reg_only, 2.0 * r / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn non_positive_weights_are_rejected() {
        let g = barbell();
        let terms = pair_loss_terms(Array2::ones((6, 1)).view(), &g, &[0]).unwrap();
        let mut v = Array2::ones((1, 6));
        v[[0, 3]] = 0.0;
        assert_eq!(
            weighted_node_loss(&terms, v.view(), 0.0, 0.0),
            Err(ModelError::NonPositiveWeight { row: 0, col: 3, value: 0.0 })
        );
    }

    #[test]
    fn tape_losses_match_numeric_versions() {
        let g = barbell();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_soft(&mut rng, 6, 3);
        let rows = [4, 0, 2];
        let v = Array2::from_shape_fn((3, 6), |_| rng.random_range(0.1..1.0));
        let coeffs = PairCoefficients::new(&g, &rows).unwrap();
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let vv = tape.constant(v.clone());
        let l = pair_loss_on_tape(&mut tape, pv, &coeffs);
        let r = collapse_reg_on_tape(&mut tape, pv);
        let loss = node_loss_on_tape(&mut tape, l, Some(vv), r, 0.8);
        let terms = pair_loss_terms(p.view(), &g, &rows).unwrap();
        assert_abs_diff_eq!(tape.value(l), &terms.values, epsilon = 1e-15);
        assert_abs_diff_eq!(tape.scalar(r), collapse_reg(p.view()), epsilon = 1e-15);
        let expected = weighted_node_loss(&terms, v.view(), 0.8, collapse_reg(p.view())).unwrap();
        assert_abs_diff_eq!(tape.scalar(loss), expected, epsilon = 1e-14);
    }

    #[test]
    fn gcn_layer_without_propagation_is_skip_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let w1 = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        let skip = h.dot(&w2).mapv(crate::autodiff::selu);
        let edgeless = Graph::new(3, []).unwrap();
        assert_eq!(gcn_layer(&edgeless, &h, &w1, &w2).unwrap(), skip);
        let path = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert_abs_diff_eq!(gcn_layer(&path, &h, &Array2::zeros((2, 4)), &w2).unwrap(), skip, epsilon = 1e-15);
    }

    #[test]
    fn gcn_layer_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let path = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let h = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let w1 = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0));
        // hand-rolled D^{-1/2} A D^{-1/2} for the path 0-1-2 with degrees (1, 2, 1)
        let s = 1.0 / 2f64.sqrt();
        let norm = array![[0.0, s, 0.0], [s, 0.0, s], [0.0, s, 0.0]];
        let reference = (norm.dot(&h).dot(&w1) + h.dot(&w2)).mapv(crate::autodiff::selu);
        assert_abs_diff_eq!(gcn_layer(&path, &h, &w1, &w2).unwrap(), reference, epsilon = 1e-14);
        assert!(gcn_layer(&path, &h, &Array2::zeros((3, 3)), &w2).is_err());
    }

    #[test]
    fn gcn_composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = barbell();
        let op = SparseOperator::new(g.normalized_adjacency());
        let h = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let params = ParamSet::new()
            .with("w1", Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)))
            .with("w2", Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)));
        let err = finite_diff_check(&params, 1e-4, |t, v| {
            let hv = t.constant(h.clone());
            let out = gcn_layer_on_tape(t, &op, hv, v[0], v[1]);
            let sq = t.mul(out, out);
            t.sum(sq)
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    fn small_model(seed: u64) -> (ClusterModel, ModelInputs, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = barbell();
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let model = ClusterModel::new(3, 5, 2);
        let w = model.init(&mut rng);
        (model, ModelInputs::new(&g, &x), w)
    }

    #[test]
    fn zero_head_gives_uniform_rows() {
        let (model, inputs, mut w) = small_model(8);
        w.get_mut(HEAD_WEIGHT).unwrap().fill(0.0);
        let p = model.assign(&inputs, &w).unwrap();
        assert!(p.matrix().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn assignment_rows_are_stochastic_and_bias_is_monotone() {
        let (model, inputs, mut w) = small_model(9);
        let before = model.assign(&inputs, &w).unwrap();
        for row in before.matrix().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        w.get_mut(HEAD_BIAS).unwrap()[[0, 1]] += 0.7;
        let after = model.assign(&inputs, &w).unwrap();
        for i in 0..6 {
            assert!(after.matrix()[[i, 1]] > before.matrix()[[i, 1]]);
        }
        let mut bad = w.clone();
        *bad.get_mut(HEAD_WEIGHT).unwrap() = Array2::zeros((4, 2));
        assert!(model.assign(&inputs, &bad).is_err());
    }

    #[test]
    fn scaling_attributes_keeps_uniform_argmax() {
        let (model, inputs, mut w) = small_model(10);
        w.get_mut(HEAD_WEIGHT).unwrap().fill(0.0);
        let scaled = ModelInputs::new(&barbell(), &(&inputs.attributes * 3.0));
        let a = model.assign(&inputs, &w).unwrap();
        let b = model.assign(&scaled, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_weighted_loss_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (model, inputs, w) = small_model(20 + seed);
            let g = barbell();
            let coeffs = PairCoefficients::new(&g, &[0, 3, 5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Array2::from_shape_fn((3, 6), |_| rng.random_range(0.1..1.0));
            let err = finite_diff_check(&w, 1e-4, |t, vars| {
                let p = model.assign_on_tape(t, &inputs, vars);
                let l = pair_loss_on_tape(t, p, &coeffs);
                let r = collapse_reg_on_tape(t, p);
                let vv = t.constant(v.clone());
                node_loss_on_tape(t, l, Some(vv), r, 1.0)
            })
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
