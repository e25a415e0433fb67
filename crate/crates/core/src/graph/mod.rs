//! Undirected attributed graphs, node labels and train/val/test splits.
//!
//! A [`Graph`] is immutable once built. Adjacency is kept in compressed
//! sparse row form with every neighbor list sorted ascending, so adjacency
//! queries are a binary search. Features are a dense row-major `n × f`
//! matrix.

mod io;
mod labels;
mod splits;

pub use io::{load_dataset, read_edges, read_features, read_labels, save_dataset, DatasetPaths};
pub use labels::{LabelSet, SealedLabels};
pub use splits::{make_splits, read_splits, write_splits, Split, SplitSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("non-finite feature value at node {node}, column {col}")]
    NonFinite { node: usize, col: usize },
    #[error("label {label} >= number of classes {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label of node {0} is sealed until final evaluation")]
    Sealed(usize),
    #[error("cannot split: {0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable undirected graph with dense node features.
///
/// Equality compares structure and features only; the source edge-record
/// count is provenance.
#[derive(Debug, Clone)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    features: Vec<f64>,
    feature_dim: usize,
    edge_records: usize,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.offsets == other.offsets
            && self.targets == other.targets
            && self.feature_dim == other.feature_dim
            && self.features == other.features
    }
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Edges are symmetrized,
    /// duplicates and self-loops are dropped.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Vec<f64>,
        feature_dim: usize,
    ) -> Result<Self, GraphError> {
        if features.len() != n * feature_dim {
            return Err(GraphError::Dimension(format!(
                "feature buffer has {} values, expected {n} x {feature_dim}",
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite {
                node: pos / feature_dim.max(1),
                col: pos % feature_dim.max(1),
            });
        }

        let mut degree = vec![0usize; n];
        for &(a, b) in edges {
            for idx in [a, b] {
                if idx >= n {
                    return Err(GraphError::NodeOutOfRange { index: idx, n });
                }
            }
            if a != b {
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        let mut lists: Vec<Vec<u32>> = degree.iter().map(|&d| Vec::with_capacity(d)).collect();
        for &(a, b) in edges {
            if a != b {
                lists[a].push(b as u32);
                lists[b].push(a as u32);
            }
        }

        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(&list);
            offsets.push(targets.len());
        }

        Ok(Graph {
            offsets,
            targets,
            features,
            feature_dim,
            edge_records: edges.len(),
        })
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of undirected edges, each counted once.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Number of edge records in the source the graph was built from,
    /// before symmetrization and deduplication.
    pub fn edge_records(&self) -> usize {
        self.edge_records
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: usize) -> Result<&[u32], GraphError> {
        if i >= self.n() {
            return Err(GraphError::NodeOutOfRange { index: i, n: self.n() });
        }
        Ok(self.neighbors_unchecked(i))
    }

    #[inline]
    pub(crate) fn neighbors_unchecked(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Adjacency test by binary search on the sorted neighbor list.
    #[inline]
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors_unchecked(a).binary_search(&(b as u32)).is_ok()
    }

    /// Iterates every undirected edge once as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors_unchecked(i)
                .iter()
                .map(|&j| j as usize)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    /// Row `i` of the feature matrix.
    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// The full row-major feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }
}
