use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, LocalDataset, Origin};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelLayout {
    /// Client `i` holds the `c` consecutive labels centred on `i` (mod L).
    Circular,
    /// Each client holds a seeded random subset of `c` labels.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub classes_per_client: usize,
    pub seed: u64,
    pub layout: LabelLayout,
    /// Cap on points per (client, class) pair.
    pub max_per_class: Option<usize>,
    /// Per-client cluster counts; defaults to `classes_per_client`.
    pub k_per_client: Option<Vec<usize>>,
}

impl PartitionSpec {
    pub fn new(n_clients: usize, classes_per_client: usize, seed: u64, layout: LabelLayout) -> Self {
        Self {
            n_clients,
            classes_per_client,
            seed,
            layout,
            max_per_class: None,
            k_per_client: None,
        }
    }

    /// Label set held by each client.
    pub fn label_sets(&self, n_classes: usize) -> Result<Vec<BTreeSet<usize>>> {
        let c = self.classes_per_client;
        if c == 0 || c > n_classes {
            return Err(Error::Partition(format!(
                "classes_per_client = {c} must be in [1, {n_classes}]"
            )));
        }
        if self.n_clients == 0 {
            return Err(Error::Partition("n_clients must be at least 1".into()));
        }
        Ok(match self.layout {
            LabelLayout::Circular => (0..self.n_clients)
                .map(|i| {
                    let start = i as i64 - ((c as i64 - 1) / 2);
                    (0..c as i64)
                        .map(|t| (start + t).rem_euclid(n_classes as i64) as usize)
                        .collect()
                })
                .collect(),
            LabelLayout::Random => {
                let mut rng = rng::stream(self.seed, &[rng::label("label-layout")]);
                let mut labels: Vec<usize> = (0..n_classes).collect();
                (0..self.n_clients)
                    .map(|_| {
                        labels.shuffle(&mut rng);
                        labels[..c].iter().copied().collect()
                    })
                    .collect()
            }
        })
    }
}

/// Split off a stratified labelled holdout (for the server-side probe).
/// Returns `(remaining, holdout)`.
pub fn split_holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::arg(format!("holdout fraction {fraction} not in [0, 1)")));
    }
    let mut rng = rng::stream(seed, &[rng::label("holdout")]);
    let labels = ds.labels().for_evaluation();
    let mut held = Vec::new();
    for c in 0..ds.n_classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let take = (fraction * idx.len() as f64).round() as usize;
        held.extend_from_slice(&idx[..take]);
    }
    held.sort_unstable();
    let held_set: BTreeSet<usize> = held.iter().copied().collect();
    let rest: Vec<usize> = (0..ds.len()).filter(|i| !held_set.contains(i)).collect();
    Ok((ds.subset(&rest), ds.subset(&held)))
}

/// Deal the dataset out to clients by label set.
///
/// Every (client, class) pair receives the same number of points, so all
/// clients end up with equal dataset sizes; surplus points of larger classes
/// are left undrawn. Each drawn point goes to exactly one client.
pub fn partition_noniid(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<LocalDataset>> {
    let sets = spec.label_sets(ds.n_classes)?;
    if let Some(ks) = &spec.k_per_client {
        if ks.len() != spec.n_clients || ks.contains(&0) {
            return Err(Error::Partition("k_per_client must give k >= 1 for every client".into()));
        }
    }
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (client, set) in sets.iter().enumerate() {
        for &c in set {
            holders[c].push(client);
        }
    }

    let labels = ds.labels().for_evaluation();
    let mut rng = rng::stream(spec.seed, &[rng::label("partition")]);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let mut share = holders
        .iter()
        .zip(&pools)
        .filter(|(h, _)| !h.is_empty())
        .map(|(h, p)| p.len() / h.len())
        .min()
        .unwrap_or(0);
    if let Some(cap) = spec.max_per_class {
        share = share.min(cap);
    }
    if share == 0 {
        return Err(Error::Partition(format!(
            "{} clients x {} classes is infeasible: some class cannot give every holder a point",
            spec.n_clients, spec.classes_per_client
        )));
    }

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for (c, hs) in holders.iter().enumerate() {
        for (t, &client) in hs.iter().enumerate() {
            per_client[client].extend_from_slice(&pools[c][t * share..(t + 1) * share]);
        }
    }

    per_client
        .into_iter()
        .enumerate()
        .map(|(client, mut idx)| {
            idx.sort_unstable();
            let sub = ds.subset(&idx);
            let k = spec
                .k_per_client
                .as_ref()
                .map_or(spec.classes_per_client, |ks| ks[client]);
            if k > idx.len() {
                return Err(Error::Partition(format!(
                    "client {client} has {} points but k = {k}",
                    idx.len()
                )));
            }
            let origins = idx.iter().map(|&index| Origin::Local { index }).collect();
            Ok(LocalDataset::from_parts(client, sub.points, sub.labels, origins, k))
        })
        .collect()
}
