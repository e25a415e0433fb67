//! Edge homophily, accuracy and run aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::graph::{Graph, LabelSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("node {0} on an edge has no label")]
    Unlabeled(usize),
    #[error("graph has no edges")]
    NoEdges,
    #[error("empty mask")]
    EmptyMask,
    #[error("no values to aggregate")]
    Empty,
    #[error("{preds} predictions for {expected} nodes")]
    Length { preds: usize, expected: usize },
}

/// Similarity used inside the edge homophily ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    /// 1 when both endpoints share a label, else 0.
    Label,
    /// Cosine of the feature rows, negative values clamped to 0 and zero
    /// rows scored 0.
    Cosine,
}

/// Mean endpoint similarity over undirected edges, each counted once.
pub fn edge_homophily(g: &Graph, labels: &LabelSet, kind: SimilarityKind) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in g.edges() {
        total += match kind {
            SimilarityKind::Label => {
                let la = labels.get(a).ok_or(MetricsError::Unlabeled(a))?;
                let lb = labels.get(b).ok_or(MetricsError::Unlabeled(b))?;
                f64::from(la == lb)
            }
            SimilarityKind::Cosine => cosine(g.feature_row(a), g.feature_row(b)).max(0.0),
        };
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::NoEdges);
    }
    Ok(total / count as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Index of the largest entry of each row, the lowest index on ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let width = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `mask` nodes whose prediction equals their label.
pub fn accuracy(preds: &[usize], labels: &LabelSet, mask: &[usize]) -> Result<f64, MetricsError> {
    if preds.len() < labels.len() {
        return Err(MetricsError::Length {
            preds: preds.len(),
            expected: labels.len(),
        });
    }
    let truth = mask
        .iter()
        .map(|&i| labels.get(i).ok_or(MetricsError::Unlabeled(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let picked: Vec<usize> = mask.iter().map(|&i| preds[i]).collect();
    match_rate(&picked, &truth)
}

/// Fraction of positions where `preds` and `truth` agree.
pub fn match_rate(preds: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    if preds.len() != truth.len() {
        return Err(MetricsError::Length {
            preds: preds.len(),
            expected: truth.len(),
        });
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

pub fn aggregate_runs(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Summary { mean, std: var.sqrt() })
}

/// One row of dataset statistics: size, edge records, feature width, class
/// count and both homophily ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub nodes: usize,
    /// Edge records in the source file, before symmetrization and deduplication.
    pub edge_records: usize,
    pub undirected_edges: usize,
    pub features: usize,
    pub classes: usize,
    pub label_homophily: f64,
    pub feature_homophily: f64,
}

impl DatasetStats {
    pub fn compute(name: &str, g: &Graph, labels: &LabelSet) -> Result<Self, MetricsError> {
        Ok(DatasetStats {
            name: name.to_string(),
            nodes: g.n(),
            edge_records: g.edge_records(),
            undirected_edges: g.edge_count(),
            features: g.feature_dim(),
            classes: labels.num_classes(),
            label_homophily: edge_homophily(g, labels, SimilarityKind::Label)?,
            feature_homophily: edge_homophily(g, labels, SimilarityKind::Cosine)?,
        })
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {:.2} {:.2}",
            self.name,
            self.nodes,
            self.edge_records,
            self.features,
            self.classes,
            self.label_homophily,
            self.feature_homophily
        )
    }
}
