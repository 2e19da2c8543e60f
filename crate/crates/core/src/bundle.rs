//! The immutable graph bundle: adjacency, features, labels and split masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrixCsr;

/// Boolean node masks for train / validation / test, pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn new(train: Vec<bool>, val: Vec<bool>, test: Vec<bool>) -> Result<Self> {
        let masks = SplitMasks { train, val, test };
        masks.validate()?;
        Ok(masks)
    }

    pub fn from_ids(num_nodes: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut masks = SplitMasks {
            train: vec![false; num_nodes],
            val: vec![false; num_nodes],
            test: vec![false; num_nodes],
        };
        for (ids, mask) in [
            (train, &mut masks.train),
            (val, &mut masks.val),
            (test, &mut masks.test),
        ] {
            for &i in ids {
                if i >= num_nodes {
                    return Err(Error::structural(format!(
                        "split node id {i} out of bounds for {num_nodes} nodes"
                    )));
                }
                mask[i] = true;
            }
        }
        masks.validate()?;
        Ok(masks)
    }

    pub fn num_nodes(&self) -> usize {
        self.train.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.train.len();
        if self.val.len() != n || self.test.len() != n {
            return Err(Error::structural("split masks must share a length"));
        }
        for i in 0..n {
            let claims = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if claims > 1 {
                return Err(Error::structural(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        if !self.train.iter().any(|&b| b) {
            return Err(Error::structural("train mask is empty"));
        }
        Ok(())
    }

    pub fn ids(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Immutable graph dataset: symmetric adjacency without stored self-loops,
/// dense node features, one label per node, and zero or more named splits.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBundle {
    pub name: String,
    pub adjacency: SparseMatrixCsr,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: BTreeMap<String, SplitMasks>,
}

impl GraphBundle {
    pub fn new(
        name: impl Into<String>,
        adjacency: SparseMatrixCsr,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: BTreeMap<String, SplitMasks>,
    ) -> Result<Self> {
        let bundle = GraphBundle {
            name: name.into(),
            adjacency,
            features,
            labels,
            num_classes,
            splits,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_rows()
    }

    /// Stored undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.num_rows();
        if self.adjacency.num_cols() != n {
            return Err(Error::structural("adjacency must be square"));
        }
        if self.adjacency.has_diagonal_entry() {
            return Err(Error::structural("adjacency must not store self-loops"));
        }
        if !self.adjacency.is_symmetric() {
            return Err(Error::structural("adjacency must be symmetric"));
        }
        if self.features.rows() != n {
            return Err(Error::structural(format!(
                "features rows {} != num nodes {n}",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::structural(format!(
                "labels length {} != num nodes {n}",
                self.labels.len()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::structural("features contain non-finite entries"));
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.num_classes {
                return Err(Error::structural(format!(
                    "label {l} at node {i} out of range for {} classes",
                    self.num_classes
                )));
            }
        }
        for (name, masks) in &self.splits {
            if masks.num_nodes() != n {
                return Err(Error::structural(format!(
                    "split {name} has {} nodes, bundle has {n}",
                    masks.num_nodes()
                )));
            }
            masks.validate()?;
        }
        Ok(())
    }

    /// Nodes outside a split's train mask: the unlabeled pool of the run.
    pub fn unlabeled_mask(split: &SplitMasks) -> Vec<bool> {
        split.train.iter().map(|&t| !t).collect()
    }

    /// Nodes eligible for pseudo-labeling: outside train, val and test.
    pub fn pseudo_pool_mask(split: &SplitMasks) -> Vec<bool> {
        (0..split.num_nodes())
            .map(|i| !split.train[i] && !split.val[i] && !split.test[i])
            .collect()
    }

    /// Fraction of `mask` nodes whose prediction matches the stored label.
    pub fn accuracy(&self, predicted: &[usize], mask: &[bool]) -> f64 {
        let mut total = 0usize;
        let mut hit = 0usize;
        for i in 0..self.num_nodes() {
            if mask[i] {
                total += 1;
                if predicted[i] == self.labels[i] {
                    hit += 1;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> GraphBundle {
        let adjacency = SparseMatrixCsr::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let features =
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        GraphBundle::new(
            "tiny",
            adjacency,
            features,
            vec![0, 1, 0],
            2,
            BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn counts() {
        let b = tiny_bundle();
        assert_eq!(b.num_nodes(), 3);
        assert_eq!(b.num_edges(), 2);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut b = tiny_bundle();
        b.labels[2] = 5;
        assert!(b.validate().is_err());
    }

    #[test]
    fn overlapping_masks_rejected() {
        let r = SplitMasks::new(
            vec![true, false, false],
            vec![true, false, false],
            vec![false, false, false],
        );
        assert!(r.is_err());
    }

    #[test]
    fn empty_train_rejected() {
        let r = SplitMasks::new(vec![false; 3], vec![false; 3], vec![true, false, false]);
        assert!(r.is_err());
    }

    #[test]
    fn pseudo_pool_excludes_val_and_test() {
        let masks = SplitMasks::new(
            vec![true, false, false, false],
            vec![false, true, false, false],
            vec![false, false, true, false],
        )
        .unwrap();
        assert_eq!(
            GraphBundle::pseudo_pool_mask(&masks),
            vec![false, false, false, true]
        );
        assert_eq!(
            GraphBundle::unlabeled_mask(&masks),
            vec![false, true, true, true]
        );
    }
}
