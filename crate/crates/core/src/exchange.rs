//! Data transfer along the discovered graph.
//!
//! Each receiver first takes a full-batch gradient step on its own data and
//! records the resulting per-point loss as a baseline. For every eligible
//! cluster on its incoming link it evaluates a small reserve sample from the
//! transmitter; if the reserve reconstructs worse than the baseline the
//! cluster is judged useful and a batch of its points is transferred.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autoenc::Model;
use crate::datastore::{diversity, LocalDataset, Origin, TrustMatrix};
use crate::error::{Error, Result};
use crate::graphrl::{DissimilarityReport, Graph};
use crate::linalg::Matrix;
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeMode {
    /// The sender keeps its points.
    Copy,
    /// Points leave the sender, capped so its diversity is unchanged.
    Move,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeParams {
    #[serde(default = "ExchangeParams::default_reserve")]
    pub reserve_size: usize,
    #[serde(default = "ExchangeParams::default_transfer")]
    pub transfer_count: usize,
    #[serde(default = "ExchangeParams::default_mode")]
    pub mode: ExchangeMode,
    /// Cluster population a sender must keep above in move mode.
    #[serde(default)]
    pub diversity_threshold: usize,
    /// Step size of the full-batch baseline step.
    #[serde(default = "ExchangeParams::default_pretrain_lr")]
    pub pretrain_lr: f64,
    /// Number of full-batch steps before measuring the baseline.
    #[serde(default = "ExchangeParams::default_pretrain_steps")]
    pub pretrain_steps: usize,
    /// When false every eligible cluster is transferred without evaluation.
    #[serde(default = "ExchangeParams::default_benefit_test")]
    pub benefit_test: bool,
}

impl ExchangeParams {
    fn default_reserve() -> usize {
        20
    }
    fn default_transfer() -> usize {
        100
    }
    fn default_mode() -> ExchangeMode {
        ExchangeMode::Copy
    }
    fn default_pretrain_lr() -> f64 {
        1.0
    }
    fn default_pretrain_steps() -> usize {
        1
    }
    fn default_benefit_test() -> bool {
        true
    }

    pub fn validate(&self) -> Result<()> {
        if self.reserve_size == 0 {
            return Err(Error::arg("reserve_size must be at least 1"));
        }
        if !(self.pretrain_lr >= 0.0) {
            return Err(Error::arg("pretrain_lr must be nonnegative"));
        }
        Ok(())
    }
}

impl Default for ExchangeParams {
    fn default() -> Self {
        Self {
            reserve_size: Self::default_reserve(),
            transfer_count: Self::default_transfer(),
            mode: Self::default_mode(),
            diversity_threshold: 0,
            pretrain_lr: Self::default_pretrain_lr(),
            pretrain_steps: Self::default_pretrain_steps(),
            benefit_test: Self::default_benefit_test(),
        }
    }
}

/// Receiver-side per-point loss after the baseline step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub client: usize,
    pub value: f64,
}

/// Full-batch gradient steps on the client's own data, then the normalized
/// loss of the updated model on that data.
pub fn pretrain_baseline(model: &Model, ld: &LocalDataset, eta: f64, steps: usize) -> Result<(Model, Baseline)> {
    if ld.is_empty() {
        return Err(Error::arg(format!("client {} has no data to pretrain on", ld.client_id)));
    }
    let mut m = model.clone();
    for _ in 0..steps {
        m.sgd_step(&ld.points, eta)?;
    }
    let value = m.mean_loss(&ld.points)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("client {} baseline loss is {value}", ld.client_id)));
    }
    Ok((
        m,
        Baseline {
            client: ld.client_id,
            value,
        },
    ))
}

/// Uniform sample without replacement of up to `size` rows of cluster `cluster`.
pub fn select_reserve(
    trans: &LocalDataset,
    cluster: usize,
    receiver: usize,
    trusted: bool,
    size: usize,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    if !trusted {
        return Err(Error::Permission {
            transmitter: trans.client_id,
            receiver,
            cluster,
        });
    }
    let members = trans.cluster_members(cluster)?;
    if members.is_empty() {
        return Err(Error::state(format!(
            "cluster {cluster} of client {} is empty",
            trans.client_id
        )));
    }
    let take = size.min(members.len());
    let mut picked: Vec<usize> = index::sample(rng, members.len(), take).into_iter().map(|k| members[k]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// True when the reserve's per-point loss under the receiver model strictly
/// exceeds the receiver's own baseline.
pub fn benefit_test(model: &Model, baseline: &Baseline, reserve: &Matrix) -> Result<(bool, f64)> {
    if reserve.is_empty() {
        return Err(Error::arg("benefit test needs a nonempty reserve"));
    }
    let reserve_loss = model.mean_loss(reserve)?;
    Ok((reserve_loss > baseline.value, reserve_loss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeDecision {
    pub receiver: usize,
    pub transmitter: usize,
    pub cluster: usize,
    /// Number of eligible clusters on the link.
    pub lambda: usize,
    pub baseline: f64,
    pub reserve_loss: f64,
    pub benefit_pass: bool,
    pub points_moved: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExchangeReport {
    pub decisions: Vec<ExchangeDecision>,
    /// Accepted foreign clusters per receiver.
    pub accepted: Vec<usize>,
}

impl ExchangeReport {
    pub fn points_received(&self, receiver: usize) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.receiver == receiver)
            .map(|d| d.points_moved)
            .sum()
    }

    pub fn total_moved(&self) -> usize {
        self.decisions.iter().map(|d| d.points_moved).sum()
    }
}

/// Everything an exchange pass reads.
pub struct ExchangeInputs<'a> {
    pub graph: &'a Graph,
    pub dissimilarity: &'a DissimilarityReport,
    /// `trust[j]` is transmitter `j`'s matrix.
    pub trust: &'a [TrustMatrix],
    /// Receiver models after the baseline step.
    pub models: &'a [Model],
    pub baselines: &'a [Baseline],
    /// Clustered datasets before the exchange.
    pub datasets: &'a [LocalDataset],
}

/// Largest number of points a move may take from a cluster of `population`
/// without changing the sender's diversity at `threshold`.
fn move_cap(population: usize, threshold: usize) -> usize {
    if population > threshold {
        population - threshold - 1
    } else {
        population
    }
}

/// Run the benefit test on every eligible cluster of every edge and apply
/// the accepted transfers. Senders are read from the pre-exchange snapshot, so
/// transfers never chain within one pass. Each receiver's `k` grows by the
/// number of clusters it accepted; receivers lose their cluster assignments.
pub fn execute_exchange(
    inputs: &ExchangeInputs<'_>,
    params: &ExchangeParams,
    seed: u64,
) -> Result<(Vec<LocalDataset>, ExchangeReport)> {
    params.validate()?;
    let n = inputs.datasets.len();
    if inputs.graph.n() != n
        || inputs.trust.len() != n
        || inputs.models.len() != n
        || inputs.baselines.len() != n
        || inputs.dissimilarity.n() != n
    {
        return Err(Error::arg("exchange inputs disagree on the number of clients"));
    }
    inputs.graph.validate()?;
    let snapshot = inputs.datasets;
    let mut out: Vec<LocalDataset> = snapshot.to_vec();
    let mut report = ExchangeReport {
        decisions: Vec::new(),
        accepted: vec![0; n],
    };
    let mut taken: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];

    for (j, i) in inputs.graph.edges() {
        let sender = &snapshot[j];
        let eligible = inputs.dissimilarity.eligible(i, j);
        let lambda = eligible.len();
        for &cluster in eligible {
            let trusted = inputs.trust[j].get(i, cluster);
            let path = [i as u64, j as u64, cluster as u64];
            let mut reserve_rng = rng::stream(seed, &[rng::label("reserve"), path[0], path[1], path[2]]);
            let reserve = select_reserve(sender, cluster, i, trusted, params.reserve_size, &mut reserve_rng)?;
            let (pass, reserve_loss) = if params.benefit_test {
                benefit_test(&inputs.models[i], &inputs.baselines[i], &sender.points.select_rows(&reserve))?
            } else {
                (true, inputs.models[i].mean_loss(&sender.points.select_rows(&reserve))?)
            };
            let mut moved = 0;
            if pass {
                let members: Vec<usize> = sender
                    .cluster_members(cluster)?
                    .into_iter()
                    .filter(|r| !taken[j].contains(r))
                    .collect();
                let cap = match params.mode {
                    ExchangeMode::Copy => members.len(),
                    ExchangeMode::Move => {
                        let population = sender.cluster_members(cluster)?.len() - removed_from(&taken[j], sender, cluster)?;
                        move_cap(population, params.diversity_threshold)
                    }
                };
                let count = params.transfer_count.min(cap).min(members.len());
                let mut transfer_rng = rng::stream(seed, &[rng::label("transfer"), path[0], path[1], path[2]]);
                let rows = pick_transfer(&members, &reserve, count, &mut transfer_rng);
                let labels = sender.labels().for_evaluation();
                for &r in &rows {
                    out[i].push_point(
                        sender.points.row(r),
                        labels[r],
                        Origin::Transferred {
                            from: j,
                            cluster,
                            source_row: r,
                        },
                    )?;
                }
                if params.mode == ExchangeMode::Move {
                    taken[j].extend(rows.iter().copied());
                }
                moved = rows.len();
                if moved > 0 {
                    report.accepted[i] += 1;
                }
            }
            report.decisions.push(ExchangeDecision {
                receiver: i,
                transmitter: j,
                cluster,
                lambda,
                baseline: inputs.baselines[i].value,
                reserve_loss,
                benefit_pass: pass,
                points_moved: moved,
            });
        }
    }

    if params.mode == ExchangeMode::Move {
        for (j, rows) in taken.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            // Received points sit after the original rows, so original row
            // indices are still valid here.
            let kept_assignments: Vec<usize> = snapshot[j]
                .assignments()?
                .iter()
                .enumerate()
                .filter(|(r, _)| !rows.contains(r))
                .map(|(_, &a)| a)
                .collect();
            let received = out[j].len() - snapshot[j].len();
            out[j].remove_rows(rows);
            if received == 0 {
                out[j].cluster_assignments = Some(kept_assignments);
            }
        }
    }
    for i in 0..n {
        if report.accepted[i] > 0 {
            out[i].k += report.accepted[i];
            out[i].cluster_assignments = None;
        }
    }
    Ok((out, report))
}

fn removed_from(taken: &BTreeSet<usize>, sender: &LocalDataset, cluster: usize) -> Result<usize> {
    let a = sender.assignments()?;
    Ok(taken.iter().filter(|&&r| a[r] == cluster).count())
}

/// Prefer rows outside the reserve; fall back to reserve rows when the
/// cluster is too small.
fn pick_transfer(members: &[usize], reserve: &[usize], count: usize, rng: &mut SimRng) -> Vec<usize> {
    let reserve: BTreeSet<usize> = reserve.iter().copied().collect();
    let (fresh, probed): (Vec<usize>, Vec<usize>) = members.iter().partition(|r| !reserve.contains(r));
    let mut rows: Vec<usize> = index::sample(rng, fresh.len(), count.min(fresh.len()))
        .into_iter()
        .map(|k| fresh[k])
        .collect();
    if rows.len() < count {
        let extra = count - rows.len();
        rows.extend(
            index::sample(rng, probed.len(), extra.min(probed.len()))
                .into_iter()
                .map(|k| probed[k]),
        );
    }
    rows.sort_unstable();
    rows
}

/// A transferred point whose source cluster was not shared with its receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustViolation {
    pub receiver: usize,
    pub row: usize,
    pub transmitter: usize,
    pub cluster: usize,
}

/// Check every transferred point's provenance against the transmitters' trust
/// matrices.
pub fn audit_provenance(datasets: &[LocalDataset], trust: &[TrustMatrix]) -> Vec<TrustViolation> {
    let mut out = Vec::new();
    for ld in datasets {
        for (row, origin) in ld.origins.iter().enumerate() {
            if let Origin::Transferred { from, cluster, .. } = *origin {
                let allowed = trust
                    .get(from)
                    .is_some_and(|t| cluster < t.k() && ld.client_id < t.n_clients() && t.get(ld.client_id, cluster));
                if !allowed {
                    out.push(TrustViolation {
                        receiver: ld.client_id,
                        row,
                        transmitter: from,
                        cluster,
                    });
                }
            }
        }
    }
    out
}

/// Whether `after` still begins with exactly the rows of `before`.
pub fn original_rows_unchanged(before: &LocalDataset, after: &LocalDataset) -> bool {
    let n = before.len();
    if after.len() < n {
        return false;
    }
    let d = before.points.cols();
    let same_points = before
        .points
        .as_slice()
        .iter()
        .zip(&after.points.as_slice()[..n * d])
        .all(|(a, b)| a.to_bits() == b.to_bits());
    same_points
        && before.labels().for_evaluation() == &after.labels().for_evaluation()[..n]
        && before.origins[..] == after.origins[..n]
}

/// Per-client diversity at `threshold`, for move-mode checks.
pub fn diversities(datasets: &[LocalDataset], threshold: usize) -> Result<Vec<usize>> {
    datasets.iter().map(|ld| diversity(ld, threshold)).collect()
}
