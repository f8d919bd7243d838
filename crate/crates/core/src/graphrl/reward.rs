use crate::datastore::TrustMatrix;
use crate::embedding::ClusterModel;
use crate::error::{Error, Result};
use crate::linalg::{dist, Matrix};

/// Annealed weight `gamma(t) = min(1, t / horizon)`.
///
/// The same schedule weights the network term of the global reward and the
/// exploitation share of the policy. A zero horizon means `gamma = 1`
/// throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    pub horizon: usize,
}

impl GammaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        if self.horizon == 0 {
            1.0
        } else {
            (t as f64 / self.horizon as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    /// Weight on dissimilarity.
    pub alpha1: f64,
    /// Weight on failure probability.
    pub alpha2: f64,
    /// Centroid distance above which two clusters count as different.
    pub beta: f64,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::arg("reward weights must be nonnegative"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::arg("beta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dissimilarity {
    /// Number of eligible transmitter clusters.
    pub lambda: usize,
    /// For each transmitter cluster `m`, how many receiver centroids lie
    /// farther than beta from it.
    pub per_cluster: Vec<usize>,
    /// Transmitter clusters far from every receiver centroid and trusted.
    pub eligible: Vec<usize>,
}

/// Count the transmitter clusters the receiver may want.
pub fn dissimilarity(recv: &ClusterModel, trans: &ClusterModel, trust_row: &[bool], beta: f64) -> Result<Dissimilarity> {
    if recv.basis_fingerprint != trans.basis_fingerprint {
        return Err(Error::state(format!(
            "clients {} and {} were clustered in different bases",
            recv.client_id, trans.client_id
        )));
    }
    if trust_row.len() != trans.k() {
        return Err(Error::arg(format!(
            "trust row has {} entries for {} clusters",
            trust_row.len(),
            trans.k()
        )));
    }
    let k_recv = recv.k();
    let per_cluster: Vec<usize> = trans
        .centroids
        .iter_rows()
        .map(|vm| recv.centroids.iter_rows().filter(|vn| dist(vn, vm) > beta).count())
        .collect();
    let eligible: Vec<usize> = per_cluster
        .iter()
        .enumerate()
        .filter(|&(m, &count)| count == k_recv && trust_row[m])
        .map(|(m, _)| m)
        .collect();
    Ok(Dissimilarity {
        lambda: eligible.len(),
        per_cluster,
        eligible,
    })
}

/// Dissimilarity for every ordered (receiver, transmitter) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityReport {
    /// `lambda[i][j]`: clusters receivable by `i` from `j`; zero on the diagonal.
    pub lambda: Vec<Vec<usize>>,
    pub pairs: Vec<Vec<Option<Dissimilarity>>>,
}

impl DissimilarityReport {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn eligible(&self, receiver: usize, transmitter: usize) -> &[usize] {
        self.pairs[receiver][transmitter]
            .as_ref()
            .map_or(&[], |d| d.eligible.as_slice())
    }

    pub fn lambda_matrix(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.lambda[i][j] as f64);
            }
        }
        m
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        self.lambda_matrix().off_diagonal_mean().unwrap_or(0.0)
    }
}

/// `trust[j]` is transmitter `j`'s matrix.
pub fn dissimilarity_report(models: &[ClusterModel], trust: &[TrustMatrix], beta: f64) -> Result<DissimilarityReport> {
    let n = models.len();
    if trust.len() != n {
        return Err(Error::arg("one trust matrix per client is required"));
    }
    let mut lambda = vec![vec![0; n]; n];
    let mut pairs = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dissimilarity(&models[i], &models[j], &trust[j].row(i), beta)?;
            lambda[i][j] = d.lambda;
            pairs[i][j] = Some(d);
        }
    }
    Ok(DissimilarityReport { lambda, pairs })
}

/// Distances between centroids of different clients, used to pick beta.
pub fn inter_client_distances(models: &[ClusterModel]) -> Vec<f64> {
    let mut out = Vec::new();
    for (a, ma) in models.iter().enumerate() {
        for mb in &models[a + 1..] {
            for va in ma.centroids.iter_rows() {
                for vb in mb.centroids.iter_rows() {
                    out.push(dist(va, vb));
                }
            }
        }
    }
    out
}

/// Linear-interpolation percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::arg(format!("percentile {p} not in [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn local_reward(lambda: usize, p_fail: f64, params: &RewardParams) -> f64 {
    params.alpha1 * lambda as f64 - params.alpha2 * p_fail
}

/// Local rewards collected from every agent in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardShares {
    shares: Vec<Option<f64>>,
}

impl RewardShares {
    pub fn new(n: usize) -> Self {
        Self { shares: vec![None; n] }
    }

    pub fn from_complete(values: &[f64]) -> Self {
        Self {
            shares: values.iter().copied().map(Some).collect(),
        }
    }

    pub fn submit(&mut self, client: usize, reward: f64) {
        self.shares[client] = Some(reward);
    }

    /// Mean of all shares; fails until every agent has reported.
    pub fn mean(&self) -> Result<f64> {
        let missing: Vec<usize> = (0..self.shares.len()).filter(|&i| self.shares[i].is_none()).collect();
        if !missing.is_empty() || self.shares.is_empty() {
            return Err(Error::Sync(format!("missing reward shares from clients {missing:?}")));
        }
        Ok(self.shares.iter().flatten().sum::<f64>() / self.shares.len() as f64)
    }
}

/// `R = r + gamma * (mean(shares) - r_net_prev)`.
pub fn global_reward(local: f64, shares: &RewardShares, r_net_prev: f64, gamma: f64) -> Result<f64> {
    Ok(local + gamma * (shares.mean()? - r_net_prev))
}

/// Static per-link local rewards. Dissimilarity and failure probability do
/// not change during discovery, so each episode is a lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    rewards: Matrix,
}

impl RewardTable {
    pub fn new(lambda: &[Vec<usize>], p_fail: &Matrix, params: &RewardParams) -> Result<Self> {
        let n = lambda.len();
        if p_fail.rows() != n || p_fail.cols() != n || lambda.iter().any(|r| r.len() != n) {
            return Err(Error::arg("lambda and failure matrices must both be N x N"));
        }
        let mut rewards = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rewards.set(i, j, local_reward(lambda[i][j], p_fail.get(i, j), params));
                }
            }
        }
        Ok(Self { rewards })
    }

    /// Use a precomputed reward matrix directly.
    pub fn from_matrix(rewards: Matrix) -> Result<Self> {
        if rewards.rows() != rewards.cols() || rewards.rows() < 2 {
            return Err(Error::arg("reward table must be square with N >= 2"));
        }
        Ok(Self { rewards })
    }

    pub fn n(&self) -> usize {
        self.rewards.rows()
    }

    pub fn get(&self, receiver: usize, transmitter: usize) -> f64 {
        self.rewards.get(receiver, transmitter)
    }

    pub fn row(&self, receiver: usize) -> &[f64] {
        self.rewards.row(receiver)
    }
}
