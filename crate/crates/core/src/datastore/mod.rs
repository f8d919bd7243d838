//! Dataset ingestion, non-i.i.d. partitioning, trust matrices and diversity
//! accounting.

mod loaders;
mod partition;
mod trust;

pub use loaders::{load_cifar10, load_dataset, load_idx, parse_idx, synthetic_gmm, DataSource, GmmSpec};
pub use partition::{partition_noniid, split_holdout, LabelLayout, PartitionSpec};
pub use trust::{build_trust_matrix, TrustMatrix, TrustPolicy};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Ground-truth class labels.
///
/// Training code never needs these; they exist for partitioning and for the
/// server-side linear probe. Reading them requires the explicit
/// [`HiddenLabels::for_evaluation`] call so accidental use is easy to grep.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn for_evaluation(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }
}

/// A full labelled dataset with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub points: Matrix,
    labels: HiddenLabels,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::arg(format!(
                "{} points but {} labels",
                points.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::arg(format!("label {bad} outside [0, {n_classes})")));
        }
        if let Some(v) = points.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Self {
            name: name.into(),
            points,
            labels: HiddenLabels(labels),
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn labels(&self) -> &HiddenLabels {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in self.labels.for_evaluation() {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            points: self.points.select_rows(idx),
            labels: self.labels.select(idx),
            n_classes: self.n_classes,
        }
    }
}

/// Where a point in a local dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Present in the client's initial partition; `index` is the row in the
    /// full dataset.
    Local { index: usize },
    /// Received over a D2D link from `from`'s cluster `cluster`.
    Transferred {
        from: usize,
        cluster: usize,
        source_row: usize,
    },
}

/// One client's data.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub client_id: usize,
    pub points: Matrix,
    labels: HiddenLabels,
    /// Provenance for every row of `points`.
    pub origins: Vec<Origin>,
    /// Filled by `embedding::cluster_local`.
    pub cluster_assignments: Option<Vec<usize>>,
    /// Declared cluster count.
    pub k: usize,
}

impl LocalDataset {
    pub fn new(client_id: usize, points: Matrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::arg("points and labels differ in length"));
        }
        if k == 0 {
            return Err(Error::arg("cluster count k must be at least 1"));
        }
        let origins = (0..points.rows()).map(|index| Origin::Local { index }).collect();
        Ok(Self {
            client_id,
            points,
            labels: HiddenLabels(labels),
            origins,
            cluster_assignments: None,
            k,
        })
    }

    pub(crate) fn from_parts(
        client_id: usize,
        points: Matrix,
        labels: HiddenLabels,
        origins: Vec<Origin>,
        k: usize,
    ) -> Self {
        Self {
            client_id,
            points,
            labels,
            origins,
            cluster_assignments: None,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn labels(&self) -> &HiddenLabels {
        &self.labels
    }

    /// Distinct ground-truth classes held, for evaluation reports.
    pub fn class_set(&self) -> std::collections::BTreeSet<usize> {
        self.labels.for_evaluation().iter().copied().collect()
    }

    pub fn assignments(&self) -> Result<&[usize]> {
        self.cluster_assignments
            .as_deref()
            .ok_or_else(|| Error::state(format!("client {} has not been clustered", self.client_id)))
    }

    /// Row indices belonging to cluster `k`.
    pub fn cluster_members(&self, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .assignments()?
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| (a == k).then_some(i))
            .collect())
    }

    pub fn cluster_sizes(&self) -> Result<Vec<usize>> {
        let assignments = self.assignments()?;
        let n_clusters = assignments.iter().max().map_or(0, |m| m + 1).max(self.k);
        let mut sizes = vec![0; n_clusters];
        for &a in assignments {
            sizes[a] += 1;
        }
        Ok(sizes)
    }

    /// Append a row received from another client. Clears cluster assignments.
    pub(crate) fn push_point(&mut self, row: &[f64], label: usize, origin: Origin) -> Result<()> {
        self.points.push_row(row)?;
        self.labels.0.push(label);
        self.origins.push(origin);
        self.cluster_assignments = None;
        Ok(())
    }

    /// Drop the given rows. Clears cluster assignments.
    pub(crate) fn remove_rows(&mut self, rows: &std::collections::BTreeSet<usize>) {
        let keep: Vec<usize> = (0..self.len()).filter(|i| !rows.contains(i)).collect();
        self.points = self.points.select_rows(&keep);
        self.labels = self.labels.select(&keep);
        self.origins = keep.iter().map(|&i| self.origins[i]).collect();
        self.cluster_assignments = None;
    }
}

/// Number of clusters whose population strictly exceeds `threshold`.
pub fn diversity(ld: &LocalDataset, threshold: usize) -> Result<usize> {
    Ok(ld.cluster_sizes()?.into_iter().filter(|&s| s > threshold).count())
}
