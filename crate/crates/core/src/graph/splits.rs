use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, LabelSet};

/// One train/val/test partition of the labeled nodes. Index lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub seed: u64,
    pub ratios: (f64, f64),
    pub splits: Vec<Split>,
}

fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs representation error in products like 0.48 * 25
    (x + 0.5 + 1e-9).floor() as usize
}

/// Sizes of the train and val parts for `m` labeled nodes; the test part
/// receives the remainder.
pub(crate) fn split_sizes(m: usize, ratios: (f64, f64)) -> (usize, usize, usize) {
    let train = round_half_up(ratios.0 * m as f64).min(m);
    let val = round_half_up(ratios.1 * m as f64).min(m - train);
    (train, val, m - train - val)
}

/// Draws `n_splits` random partitions of the labeled nodes.
///
/// Split `k` shuffles the ascending labeled-node list with a ChaCha8
/// generator seeded by `seed` on stream `k`, so each split is reproducible
/// on its own. Train and val sizes are `ratio * |labeled|` rounded half up;
/// the test part takes the rest.
pub fn make_splits(
    labels: &LabelSet,
    ratios: (f64, f64),
    n_splits: usize,
    seed: u64,
) -> Result<SplitSet, GraphError> {
    let (tr, va) = ratios;
    if !(tr > 0.0 && va > 0.0 && tr + va < 1.0) {
        return Err(GraphError::Split(format!("invalid ratios ({tr}, {va})")));
    }
    let nodes = labels.labeled_nodes();
    let m = nodes.len();
    if m < labels.num_classes().max(3) {
        return Err(GraphError::Split(format!(
            "{m} labeled nodes is fewer than the {} classes",
            labels.num_classes()
        )));
    }
    let (n_train, n_val, n_test) = split_sizes(m, ratios);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(GraphError::Split(format!(
            "{m} labeled nodes gives empty part ({n_train}/{n_val}/{n_test})"
        )));
    }

    let splits = (0..n_splits)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut order = nodes.to_vec();
            order.shuffle(&mut rng);
            let mut train = order[..n_train].to_vec();
            let mut val = order[n_train..n_train + n_val].to_vec();
            let mut test = order[n_train + n_val..].to_vec();
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
            Split { train, val, test }
        })
        .collect();

    Ok(SplitSet {
        seed,
        ratios,
        splits,
    })
}

impl SplitSet {
    /// Checks that every split partitions the labeled nodes of `labels`.
    pub fn validate(&self, labels: &LabelSet) -> Result<(), GraphError> {
        let n = labels.len();
        for (k, s) in self.splits.iter().enumerate() {
            let mut seen = vec![false; n];
            for &i in s.train.iter().chain(&s.val).chain(&s.test) {
                if i >= n {
                    return Err(GraphError::NodeOutOfRange { index: i, n });
                }
                if seen[i] {
                    return Err(GraphError::Split(format!("split {k}: node {i} appears twice")));
                }
                if labels.get(i).is_none() {
                    return Err(GraphError::Split(format!("split {k}: node {i} is unlabeled")));
                }
                seen[i] = true;
            }
            if let Some(&i) = labels.labeled_nodes().iter().find(|&&i| !seen[i]) {
                return Err(GraphError::Split(format!("split {k}: labeled node {i} is in no mask")));
            }
        }
        Ok(())
    }
}

pub fn write_splits(path: &Path, splits: &SplitSet) -> Result<(), GraphError> {
    let text = serde_json::to_string_pretty(splits)
        .map_err(|e| GraphError::Split(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_splits(path: &Path) -> Result<SplitSet, GraphError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| GraphError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}
