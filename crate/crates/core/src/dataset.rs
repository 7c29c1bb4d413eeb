//! Attributed, labelled graphs: on-disk loading and a planted-partition generator.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DatasetError, SbmError};
use crate::graph::Graph;

/// A graph with a dense node-attribute matrix and integer class labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub attributes: Array2<f64>,
    pub labels: Vec<usize>,
    /// Original id of each dense node index.
    pub node_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(graph: Graph, attributes: Array2<f64>, labels: Vec<usize>) -> Result<Self, DatasetError> {
        let n = graph.n_nodes();
        if attributes.nrows() != labels.len() {
            return Err(DatasetError::RowCountMismatch {
                attributes: attributes.nrows(),
                labels: labels.len(),
            });
        }
        if attributes.nrows() != n {
            return Err(DatasetError::Invalid(format!(
                "graph has {n} nodes but attribute matrix has {} rows",
                attributes.nrows()
            )));
        }
        if attributes.ncols() == 0 {
            return Err(DatasetError::Invalid("attribute matrix has no columns".into()));
        }
        Ok(Self {
            graph,
            attributes,
            labels,
            node_ids: (0..n as u64).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_features(&self) -> usize {
        self.attributes.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// The same nodes, attributes and labels over a different edge set.
    pub fn with_graph(&self, graph: Graph) -> Self {
        assert_eq!(graph.n_nodes(), self.n_nodes(), "replacement graph has a different node count");
        Self {
            graph,
            attributes: self.attributes.clone(),
            labels: self.labels.clone(),
            node_ids: self.node_ids.clone(),
        }
    }
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One edge per line as two whitespace-separated ids; an optional third
/// column is returned as-is. `#` lines and blank lines are skipped.
pub(crate) fn parse_edge_lines(path: &Path) -> Result<Vec<(usize, u64, u64, Option<String>)>, DatasetError> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse_id = |tok: Option<&str>| -> Result<u64, DatasetError> {
            let tok = tok.ok_or_else(|| DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("non-integer node id `{tok}`"),
            })
        };
        let a = parse_id(parts.next())?;
        let b = parse_id(parts.next())?;
        let extra = parts.next().map(str::to_owned);
        if parts.next().is_some() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "too many columns".into(),
            });
        }
        if a == b {
            return Err(DatasetError::SelfLoop {
                path: path.to_path_buf(),
                line: line_no,
            });
        }
        out.push((line_no, a, b, extra));
    }
    Ok(out)
}

pub(crate) fn read_labels(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = record.get(0).unwrap_or("");
        let label = field.parse::<usize>().map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("label `{field}` is not a non-negative integer"),
        })?;
        labels.push(label);
    }
    Ok(labels)
}

fn read_attributes(path: &Path) -> Result<Array2<f64>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(DatasetError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: "ragged attribute row".into(),
            });
        }
        for field in record.iter() {
            data.push(field.parse::<f64>().map_err(|_| DatasetError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("attribute `{field}` is not a number"),
            })?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), data).map_err(|e| DatasetError::Invalid(e.to_string()))
}

fn csv_error(path: &Path, err: csv::Error) -> DatasetError {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DatasetError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Maps raw ids onto `[0, n_rows)`.
///
/// Ids already below `n_rows` are used as row indices directly. Otherwise the
/// distinct ids are sorted and assigned to rows in that order, which requires
/// exactly `n_rows` distinct ids.
pub(crate) fn dense_id_map(raw: impl Iterator<Item = u64> + Clone, n_rows: usize) -> Result<(HashMap<u64, usize>, Vec<u64>), DatasetError> {
    let max = raw.clone().max();
    if max.is_none_or(|m| (m as usize) < n_rows) {
        let ids: Vec<u64> = (0..n_rows as u64).collect();
        return Ok((ids.iter().map(|&id| (id, id as usize)).collect(), ids));
    }
    let distinct: BTreeSet<u64> = raw.collect();
    if distinct.len() != n_rows {
        return Err(DatasetError::NodeCountMismatch {
            referenced: distinct.len(),
            rows: n_rows,
        });
    }
    let ids: Vec<u64> = distinct.into_iter().collect();
    Ok((ids.iter().enumerate().map(|(idx, &id)| (id, idx)).collect(), ids))
}

pub(crate) fn build_graph(
    path: &Path,
    lines: &[(usize, u64, u64, Option<String>)],
    map: &HashMap<u64, usize>,
    n: usize,
) -> Result<Graph, DatasetError> {
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::with_capacity(lines.len());
    for &(line, a, b, _) in lines {
        let (i, j) = (map[&a], map[&b]);
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(DatasetError::DuplicateEdge {
                path: path.to_path_buf(),
                line,
            });
        }
        edges.push((i, j));
    }
    Ok(Graph::new(n, edges)?)
}

/// Loads an edge list, an attribute CSV and a label CSV.
///
/// Row `r` of the attribute and label files describes node `r`. Self-loops and
/// duplicate edges are rejected with the offending line number.
pub fn load_dataset(
    edge_list_path: impl AsRef<Path>,
    attributes_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DatasetError> {
    let edge_path = edge_list_path.as_ref();
    let lines = parse_edge_lines(edge_path)?;
    let attributes = read_attributes(attributes_path.as_ref())?;
    let labels = read_labels(labels_path.as_ref())?;
    if attributes.nrows() != labels.len() {
        return Err(DatasetError::RowCountMismatch {
            attributes: attributes.nrows(),
            labels: labels.len(),
        });
    }
    let n = labels.len();
    let (map, node_ids) = dense_id_map(lines.iter().flat_map(|l| [l.1, l.2]), n)?;
    let graph = build_graph(edge_path, &lines, &map, n)?;
    let mut dataset = Dataset::new(graph, attributes, labels)?;
    dataset.node_ids = node_ids;
    Ok(dataset)
}

/// Parameters of the planted-partition generator.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SbmSpec {
    pub n_per_cluster: usize,
    pub k_clusters: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attr_dim: usize,
    pub attr_signal: f64,
    pub seed: u64,
}

/// Stochastic block model graph with Gaussian node attributes.
///
/// Nodes are laid out cluster by cluster. Attribute dimension `d` belongs to
/// cluster `d % k`; a node's attributes are `attr_signal` on its cluster's
/// dimensions (zero elsewhere) plus unit Gaussian noise.
pub fn synth_sbm(spec: &SbmSpec) -> Result<Dataset, SbmError> {
    let SbmSpec {
        n_per_cluster,
        k_clusters,
        p_in,
        p_out,
        attr_dim,
        attr_signal,
        seed,
    } = *spec;
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(SbmError::Probabilities { p_in, p_out });
    }
    if !(attr_signal >= 0.0) {
        return Err(SbmError::Signal(attr_signal));
    }
    if n_per_cluster == 0 || k_clusters == 0 || attr_dim == 0 {
        return Err(SbmError::EmptyShape);
    }
    let n = n_per_cluster * k_clusters;
    let labels: Vec<usize> = (0..n).map(|i| i / n_per_cluster).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let attributes = Array2::from_shape_fn((n, attr_dim), |(i, d)| {
        let mean = if d % k_clusters == labels[i] { attr_signal } else { 0.0 };
        mean + rng.sample::<f64, _>(StandardNormal)
    });
    let graph = Graph::new(n, edges).expect("generated edges are simple");
    Ok(Dataset::new(graph, attributes, labels).expect("generated shapes are consistent"))
}
