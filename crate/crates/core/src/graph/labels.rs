use std::sync::atomic::{AtomicUsize, Ordering};

use super::GraphError;

/// Per-node class labels; nodes without a label are unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<Option<u32>>,
    num_classes: usize,
    labeled: Vec<usize>,
}

impl LabelSet {
    /// `num_classes` is derived as one more than the largest label.
    pub fn new(labels: Vec<Option<u32>>) -> Self {
        let num_classes = labels.iter().flatten().map(|&c| c as usize + 1).max().unwrap_or(0);
        let labeled = labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect();
        LabelSet {
            labels,
            num_classes,
            labeled,
        }
    }

    pub fn from_classes(classes: &[u32]) -> Self {
        Self::new(classes.iter().map(|&c| Some(c)).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// The labeled node set, ascending.
    pub fn labeled_nodes(&self) -> &[usize] {
        &self.labeled
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.labels.get(i).copied().flatten().map(|c| c as usize)
    }

    pub fn as_slice(&self) -> &[Option<u32>] {
        &self.labels
    }

    /// Hides the labels of `sealed` nodes behind an audited view. Reads of a
    /// sealed label through the view fail and are counted.
    pub fn seal<'a>(&'a self, sealed: &[usize]) -> SealedLabels<'a> {
        let mut mask = vec![false; self.labels.len()];
        for &i in sealed {
            if i < mask.len() {
                mask[i] = true;
            }
        }
        SealedLabels {
            inner: self,
            sealed: mask,
            violations: AtomicUsize::new(0),
        }
    }
}

/// Label view with part of the node set withheld.
#[derive(Debug)]
pub struct SealedLabels<'a> {
    inner: &'a LabelSet,
    sealed: Vec<bool>,
    violations: AtomicUsize,
}

impl<'a> SealedLabels<'a> {
    pub fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    pub fn get(&self, i: usize) -> Result<Option<usize>, GraphError> {
        if self.sealed.get(i).copied().unwrap_or(false) {
            self.violations.fetch_add(1, Ordering::Relaxed);
            return Err(GraphError::Sealed(i));
        }
        Ok(self.inner.get(i))
    }

    /// Labels for `nodes`, failing on the first sealed or unlabeled node.
    pub fn labels_for(&self, nodes: &[usize]) -> Result<Vec<usize>, GraphError> {
        nodes
            .iter()
            .map(|&i| {
                self.get(i)?.ok_or_else(|| {
                    GraphError::Dimension(format!("node {i} has no label"))
                })
            })
            .collect()
    }

    /// Number of attempted reads of sealed labels so far.
    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }

    /// Ends the sealed phase and returns the full label set.
    pub fn unseal(self) -> &'a LabelSet {
        self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derives_classes_and_labeled_set() {
        let ls = LabelSet::new(vec![Some(2), None, Some(0), Some(2)]);
        assert_eq!(ls.num_classes(), 3);
        assert_eq!(ls.labeled_nodes(), &[0, 2, 3]);
        assert_eq!(ls.get(1), None);
        assert_eq!(ls.get(3), Some(2));
    }

    #[test]
    fn sealed_reads_fail_and_are_counted() {
        let ls = LabelSet::from_classes(&[0, 1, 1, 0]);
        let view = ls.seal(&[2, 3]);
        assert_eq!(view.labels_for(&[0, 1]).unwrap(), vec![0, 1]);
        assert!(matches!(view.get(2), Err(GraphError::Sealed(2))));
        assert!(view.labels_for(&[1, 3]).is_err());
        assert_eq!(view.violations(), 2);
        assert_eq!(view.unseal().get(2), Some(1));
    }
}
