//! A matrix-valued computation tape with differentiable backward passes.
//!
//! Every node holds a dense `f64` matrix (scalars are `1x1`). [`Tape::backward`]
//! appends the vector-Jacobian products to the same tape using the same
//! primitives, so a gradient is itself an ordinary node and can be
//! differentiated again. That is how the one-step look-ahead gradient of the
//! meta objective is obtained.
//!
//! Second derivatives of the pointwise nonlinearities are recorded as
//! constants, which is exact up to second order; third-order derivatives are
//! not supported.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::AutodiffError;
use crate::graph::SparseOperator;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_prime(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

fn selu_second(x: f64) -> f64 {
    if x > 0.0 {
        0.0
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    SparseLeft(SparseOperator, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddRow(Var, Var),
    MulScalar(Var, Var),
    Selu(Var),
    SeluDeriv(Var),
    Sigmoid(Var),
    Relu(Var),
    Recip(Var),
    Sqrt(Var),
    RowSoftmax(Var),
    Sum(Var),
    ColSum(Var),
    RowSum(Var),
    Broadcast(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>),
    Column(Var, usize),
    PlaceColumn(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::SparseLeft(..) => "sparse_matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine(..) => "affine",
            Op::AddRow(..) => "add_row",
            Op::MulScalar(..) => "mul_scalar",
            Op::Selu(..) => "selu",
            Op::SeluDeriv(..) => "selu_deriv",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Recip(..) => "recip",
            Op::Sqrt(..) => "sqrt",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sum(..) => "sum",
            Op::ColSum(..) => "col_sum",
            Op::RowSum(..) => "row_sum",
            Op::Broadcast(..) => "broadcast",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterRows(..) => "scatter_rows",
            Op::Column(..) => "column",
            Op::PlaceColumn(..) => "place_column",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Records matrix operations in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<AutodiffError>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.dim(), (1, 1), "scalar() on a non-scalar node");
        value[[0, 0]]
    }

    /// First non-finite value encountered while recording, if any.
    pub fn fault(&self) -> Option<&AutodiffError> {
        self.fault.as_ref()
    }

    pub fn check(&self) -> Result<(), AutodiffError> {
        self.fault.clone().map_or(Ok(()), Err)
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.fault.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.fault = Some(AutodiffError::NonFinite {
                primitive: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node { op, value, needs_grad });
        Var(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().as_standard_layout().into_owned();
        let ng = self.needs(a);
        self.push(Op::Transpose(a), value, ng)
    }

    /// `op · a` for a constant sparse operator.
    pub fn sparse_left(&mut self, op: &SparseOperator, a: Var) -> Var {
        let value = op.matrix().matmul(self.value(a));
        let ng = self.needs(a);
        self.push(Op::SparseLeft(op.clone(), a), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, ng)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, ng)
    }

    /// `scale * a + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).mapv(|v| scale * v + shift);
        let ng = self.needs(a);
        self.push(Op::Affine(a, scale), value, ng)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a row vector");
        let value = self.value(m) + self.value(row);
        let ng = self.needs(m) || self.needs(row);
        self.push(Op::AddRow(m, row), value, ng)
    }

    /// Multiplies a matrix by a `1x1` node.
    pub fn mul_scalar(&mut self, m: Var, s: Var) -> Var {
        let factor = self.scalar(s);
        let value = self.value(m) * factor;
        let ng = self.needs(m) || self.needs(s);
        self.push(Op::MulScalar(m, s), value, ng)
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(selu);
        let ng = self.needs(a);
        self.push(Op::Selu(a), value, ng)
    }

    fn selu_deriv(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(selu_prime);
        let ng = self.needs(a);
        self.push(Op::SeluDeriv(a), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::recip);
        let ng = self.needs(a);
        self.push(Op::Recip(a), value, ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let ng = self.needs(a);
        self.push(Op::Sqrt(a), value, ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let ng = self.needs(a);
        self.push(Op::RowSoftmax(a), value, ng)
    }

    /// Sum of all entries, as a `1x1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::Sum(a), value, ng)
    }

    /// Column sums, `r x c -> 1 x c`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.needs(a);
        self.push(Op::ColSum(a), value, ng)
    }

    /// Row sums, `r x c -> r x 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push(Op::RowSum(a), value, ng)
    }

    fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = Array2::from_elem((rows, cols), self.scalar(a));
        let ng = self.needs(a);
        self.push(Op::Broadcast(a), value, ng)
    }

    fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let src = self.value(a);
        let value = src.broadcast((rows, src.ncols())).expect("row vector").to_owned();
        let ng = self.needs(a);
        self.push(Op::BroadcastRows(a), value, ng)
    }

    fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let src = self.value(a);
        let value = src.broadcast((src.nrows(), cols)).expect("column vector").to_owned();
        let ng = self.needs(a);
        self.push(Op::BroadcastCols(a), value, ng)
    }

    /// Selects rows by index, `n x c -> |rows| x c`.
    pub fn gather_rows(&mut self, a: Var, rows: &Arc<[usize]>) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        let ng = self.needs(a);
        self.push(Op::GatherRows(a, Arc::clone(rows)), value, ng)
    }

    fn scatter_rows(&mut self, a: Var, rows: &Arc<[usize]>, n_rows: usize) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((n_rows, src.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = value.row_mut(r);
            dst += &src.row(k);
        }
        let ng = self.needs(a);
        self.push(Op::ScatterRows(a, Arc::clone(rows)), value, ng)
    }

    /// Column `c` as an `r x 1` node.
    pub fn column(&mut self, a: Var, c: usize) -> Var {
        let value = self.value(a).column(c).to_owned().insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push(Op::Column(a, c), value, ng)
    }

    fn place_column(&mut self, a: Var, c: usize, width: usize) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((src.nrows(), width));
        value.column_mut(c).assign(&src.column(0));
        let ng = self.needs(a);
        self.push(Op::PlaceColumn(a, c), value, ng)
    }

    /// Appends the gradient of the scalar `output` with respect to each of
    /// `wrt` and returns the gradient nodes.
    ///
    /// Gradient nodes are regular tape nodes, so calling `backward` again on
    /// a scalar built from them yields second derivatives.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        self.check()?;
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NonScalarOutput { rows, cols });
        }
        let stop = wrt.iter().map(|v| v.0).min().unwrap_or(output.0 + 1);
        let mut adjoint: Vec<Option<Var>> = vec![None; output.0 + 1];
        adjoint[output.0] = Some(self.constant_scalar(1.0));

        for idx in (stop..=output.0).rev() {
            let Some(g) = adjoint[idx] else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let out = Var(idx);
            let mut contributions: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Input | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.transpose(b);
                        contributions.push((a, self.matmul(g, bt)));
                    }
                    if self.needs(b) {
                        let at = self.transpose(a);
                        contributions.push((b, self.matmul(at, g)));
                    }
                }
                Op::Transpose(a) => {
                    let gt = self.transpose(g);
                    contributions.push((a, gt));
                }
                Op::SparseLeft(sp, a) => {
                    let adj = sp.adjoint();
                    contributions.push((a, self.sparse_left(&adj, g)));
                }
                Op::Add(a, b) => {
                    contributions.push((a, g));
                    contributions.push((b, g));
                }
                Op::Sub(a, b) => {
                    contributions.push((a, g));
                    if self.needs(b) {
                        contributions.push((b, self.scale(g, -1.0)));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        contributions.push((a, self.mul(g, b)));
                    }
                    if self.needs(b) {
                        contributions.push((b, self.mul(g, a)));
                    }
                }
                Op::Affine(a, scale) => contributions.push((a, self.scale(g, scale))),
                Op::AddRow(m, row) => {
                    contributions.push((m, g));
                    if self.needs(row) {
                        contributions.push((row, self.col_sum(g)));
                    }
                }
                Op::MulScalar(m, s) => {
                    if self.needs(m) {
                        contributions.push((m, self.mul_scalar(g, s)));
                    }
                    if self.needs(s) {
                        let gm = self.mul(g, m);
                        contributions.push((s, self.sum(gm)));
                    }
                }
                Op::Selu(a) => {
                    let d = self.selu_deriv(a);
                    contributions.push((a, self.mul(g, d)));
                }
                Op::SeluDeriv(a) => {
                    let d2 = self.value(a).mapv(selu_second);
                    let d2 = self.constant(d2);
                    contributions.push((a, self.mul(g, d2)));
                }
                Op::Sigmoid(a) => {
                    let one_minus = self.affine(out, -1.0, 1.0);
                    let slope = self.mul(out, one_minus);
                    contributions.push((a, self.mul(g, slope)));
                }
                Op::Relu(a) => {
                    let mask = self.value(a).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    contributions.push((a, self.mul(g, mask)));
                }
                Op::Recip(a) => {
                    let sq = self.mul(out, out);
                    let t = self.mul(g, sq);
                    contributions.push((a, self.scale(t, -1.0)));
                }
                Op::Sqrt(a) => {
                    let inv = self.recip(out);
                    let t = self.mul(g, inv);
                    contributions.push((a, self.scale(t, 0.5)));
                }
                Op::RowSoftmax(a) => {
                    let k = self.shape(out).1;
                    let gs = self.mul(g, out);
                    let dot = self.row_sum(gs);
                    let dot = self.broadcast_cols(dot, k);
                    let centered = self.sub(g, dot);
                    contributions.push((a, self.mul(out, centered)));
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(a);
                    contributions.push((a, self.broadcast(g, r, c)));
                }
                Op::ColSum(a) => {
                    let r = self.shape(a).0;
                    contributions.push((a, self.broadcast_rows(g, r)));
                }
                Op::RowSum(a) => {
                    let c = self.shape(a).1;
                    contributions.push((a, self.broadcast_cols(g, c)));
                }
                Op::Broadcast(a) => contributions.push((a, self.sum(g))),
                Op::BroadcastRows(a) => contributions.push((a, self.col_sum(g))),
                Op::BroadcastCols(a) => contributions.push((a, self.row_sum(g))),
                Op::GatherRows(a, rows) => {
                    let n = self.shape(a).0;
                    contributions.push((a, self.scatter_rows(g, &rows, n)));
                }
                Op::ScatterRows(a, rows) => contributions.push((a, self.gather_rows(g, &rows))),
                Op::Column(a, c) => {
                    let width = self.shape(a).1;
                    contributions.push((a, self.place_column(g, c, width)));
                }
                Op::PlaceColumn(a, c) => contributions.push((a, self.column(g, c))),
            }
            for (target, grad) in contributions {
                if !self.needs(target) || target.0 < stop {
                    continue;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    Some(prev) => self.add(prev, grad),
                    None => grad,
                });
            }
        }
        self.check()?;

        Ok(wrt
            .iter()
            .map(|&v| match adjoint[v.0] {
                Some(g) => g,
                None => {
                    let zeros = Array2::zeros(self.shape(v));
                    self.constant(zeros)
                }
            })
            .collect())
    }
}

/// `out += alpha * x`.
pub(crate) fn axpy(out: &mut Array2<f64>, alpha: f64, x: &Array2<f64>) {
    Zip::from(out).and(x).for_each(|o, &v| *o += alpha * v);
}
