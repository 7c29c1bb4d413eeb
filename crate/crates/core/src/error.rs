//! Error types for every layer of the library.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on node {node}")]
    SelfLoop { node: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("node {node} out of range for a graph with {n_nodes} nodes")]
    NodeOutOfRange { node: usize, n_nodes: usize },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: self-loop at line {line}")]
    SelfLoop { path: PathBuf, line: usize },
    #[error("{path}: duplicate edge at line {line}")]
    DuplicateEdge { path: PathBuf, line: usize },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("row count mismatch: {attributes} attribute rows, {labels} label rows")]
    RowCountMismatch { attributes: usize, labels: usize },
    #[error("edge list references {referenced} distinct nodes but only {rows} rows of node data exist")]
    NodeCountMismatch { referenced: usize, rows: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise ratio must be non-negative and finite, got {0}")]
    InvalidRatio(f64),
    #[error("label count {labels} does not match node count {nodes}")]
    LabelMismatch { labels: usize, nodes: usize },
    #[error("need {requested} cross-class non-edges but only {available} exist (shortfall {})", requested - available)]
    InsufficientCandidates { requested: usize, available: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum SbmError {
    #[error("block probabilities must satisfy 0 <= p_out < p_in <= 1 (got p_in={p_in}, p_out={p_out})")]
    Probabilities { p_in: f64, p_out: f64 },
    #[error("attribute signal must be non-negative, got {0}")]
    Signal(f64),
    #[error("need at least one cluster, one node per cluster and one attribute dimension")]
    EmptyShape,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value produced by `{primitive}` (node {node})")]
    NonFinite { primitive: &'static str, node: usize },
    #[error("cannot differentiate a {rows}x{cols} output; expected a scalar")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("parameter set mismatch: {0}")]
    ParamMismatch(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("pair weight V[{row},{col}] = {value} is not strictly positive")]
    NonPositiveWeight { row: usize, col: usize, value: f64 },
    #[error("similarity missing for edge ({0}, {1})")]
    MissingSimilarity(usize, usize),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("row {row} out of range for {n_nodes} nodes")]
    RowOutOfRange { row: usize, n_nodes: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("batch size {batch} too large: two disjoint batches need {} nodes, graph has {n_nodes}", 2 * batch)]
    BatchTooLarge { batch: usize, n_nodes: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: AutodiffError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("enumeration of {k}^{n} assignments exceeds the limit of {limit}")]
    EnumerationLimit { n: usize, k: usize, limit: u64 },
    #[error("no edges to rank")]
    Empty,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Sbm(#[from] SbmError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
