//! Datasets: the in-memory bundle, its on-disk format, synthetic graphs and
//! perturbations.

mod io;
mod perturb;
mod synthetic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, SparseMatrix};
use crate::tensor::DenseMatrix;

pub use io::{load_dataset, load_manifest, save_dataset, FORMAT_VERSION};
pub use perturb::{remove_features, subsample_train_labels};
pub use synthetic::{generate_sbm, sbm_smoke, SbmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One class per labeled node; rows of the label matrix are one-hot.
    SingleLabel,
    /// Any subset of classes per node; label entries are 0 or 1.
    MultiLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureEncoding {
    SparseTriplet,
    DenseBin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn nodes(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    /// Indicator vector of length `n` for one part of the split.
    pub fn mask(&self, kind: SplitKind, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in self.nodes(kind) {
            mask[i] = true;
        }
        mask
    }
}

/// Counts and provenance of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: u32,
    pub name: String,
    pub n: usize,
    /// Number of edge records as listed (before symmetrization or merging).
    pub e: usize,
    pub c: usize,
    pub f: usize,
    pub task: Task,
    pub feature_encoding: FeatureEncoding,
    /// SHA-256 of each data file, keyed by file name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checksums: BTreeMap<String, String>,
}

/// Immutable graph, features, labels and split.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    task: Task,
    feature_encoding: FeatureEncoding,
    edges: Arc<Vec<(usize, usize)>>,
    graph: Arc<SparseMatrix>,
    features: Arc<DenseMatrix>,
    labels: Arc<DenseMatrix>,
    split: Split,
}

impl Dataset {
    /// Validates and assembles a dataset. `edges` are kept as given; the raw
    /// adjacency merges duplicates but is neither symmetrized nor given
    /// self-loops.
    pub fn new(
        name: impl Into<String>,
        task: Task,
        edges: Vec<(usize, usize)>,
        features: DenseMatrix,
        labels: DenseMatrix,
        split: Split,
    ) -> Result<Self> {
        let n = features.rows();
        let graph = build_graph(&edges, n, false, false)?;
        let dataset = Self {
            name: name.into(),
            task,
            feature_encoding: FeatureEncoding::SparseTriplet,
            edges: Arc::new(edges),
            graph: Arc::new(graph),
            features: Arc::new(features),
            labels: Arc::new(labels),
            split,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.labels.rows() != n {
            return Err(Error::data(
                "labels",
                None,
                format!("{} label rows for {n} nodes", self.labels.rows()),
            ));
        }
        if !self.features.is_finite() {
            return Err(Error::data("features", None, "non-finite feature value"));
        }
        for i in 0..n {
            let row = self.labels.row(i);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::data("labels", Some(i + 1), format!("node {i}: labels must be 0 or 1")));
            }
            if self.task == Task::SingleLabel && row.iter().sum::<f64>() > 1.0 {
                return Err(Error::data(
                    "labels",
                    Some(i + 1),
                    format!("node {i} has several classes in a single-label task"),
                ));
            }
        }
        if self.split.train.is_empty() {
            return Err(Error::data("split", None, "training split is empty"));
        }
        let mut owner: Vec<Option<SplitKind>> = vec![None; n];
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            for &node in self.split.nodes(kind) {
                if node >= n {
                    return Err(Error::data("split", None, format!("{kind:?} node {node} >= n = {n}")));
                }
                if let Some(prev) = owner[node] {
                    return Err(Error::data(
                        "split",
                        None,
                        format!("node {node} appears in both {prev:?} and {kind:?}"),
                    ));
                }
                owner[node] = Some(kind);
                if self.task == Task::SingleLabel && self.labels.row(node).iter().sum::<f64>() != 1.0 {
                    return Err(Error::data(
                        "split",
                        None,
                        format!("{kind:?} node {node} has no label"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_encoding(&self) -> FeatureEncoding {
        self.feature_encoding
    }

    pub fn with_feature_encoding(mut self, encoding: FeatureEncoding) -> Self {
        self.feature_encoding = encoding;
        self
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Raw adjacency: duplicates merged, directed as listed.
    pub fn graph(&self) -> &SparseMatrix {
        &self.graph
    }

    pub fn features(&self) -> &Arc<DenseMatrix> {
        &self.features
    }

    pub fn labels(&self) -> &Arc<DenseMatrix> {
        &self.labels
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    /// Class index of a single-label node, if it has one.
    pub fn class_of(&self, node: usize) -> Option<usize> {
        self.labels.row(node).iter().position(|&v| v == 1.0)
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: FORMAT_VERSION,
            name: self.name.clone(),
            n: self.n(),
            e: self.edges.len(),
            c: self.num_classes(),
            f: self.num_features(),
            task: self.task,
            feature_encoding: self.feature_encoding,
            checksums: BTreeMap::new(),
        }
    }

    /// Same dataset with replaced features (same shape).
    pub fn with_features(&self, features: DenseMatrix) -> Result<Self> {
        if features.shape() != self.features.shape() {
            return Err(Error::config(format!(
                "replacement features {:?} do not match {:?}",
                features.shape(),
                self.features.shape()
            )));
        }
        let out = Self {
            features: Arc::new(features),
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    /// Same dataset with a replaced split.
    pub fn with_split(&self, split: Split) -> Result<Self> {
        let out = Self {
            split,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(split: Split) -> Result<Dataset> {
        let labels = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        Dataset::new(
            "tiny",
            Task::SingleLabel,
            vec![(0, 1), (1, 2)],
            DenseMatrix::identity(3),
            labels,
            split,
        )
    }

    #[test]
    fn valid_dataset_and_masks() {
        let d = tiny(Split {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        })
        .unwrap();
        assert_eq!(d.split().mask(SplitKind::Val, 3), vec![false, true, false]);
        assert_eq!(d.class_of(1), Some(1));
        assert_eq!(d.manifest().e, 2);
    }

    #[test]
    fn rejects_bad_splits() {
        let overlap = tiny(Split {
            train: vec![0],
            val: vec![0],
            test: vec![],
        });
        assert!(matches!(overlap, Err(Error::Data { .. })));
        let empty = tiny(Split::default());
        assert!(matches!(empty, Err(Error::Data { .. })));
        let range = tiny(Split {
            train: vec![5],
            ..Split::default()
        });
        assert!(matches!(range, Err(Error::Data { .. })));
    }
}
