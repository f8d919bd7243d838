use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Floor applied when the positivity guard shifts the Q-vector.
const Q_FLOOR: f64 = 1e-6;

/// One agent's learning state: the live Q row, experience buffer and a log of
/// Q snapshots taken at every update.
#[derive(Debug, Clone, PartialEq)]
pub struct QState {
    pub client: usize,
    q: Vec<f64>,
    t: usize,
    buffer: Vec<(usize, f64)>,
    capacity: usize,
    history: Vec<Vec<f64>>,
}

impl QState {
    /// Q entries start at `1/N`; the agent's own entry is masked with `-inf`.
    pub fn new(client: usize, n: usize, capacity: usize) -> Result<Self> {
        if n < 2 || client >= n {
            return Err(Error::arg(format!("agent {client} in a network of {n}")));
        }
        if capacity == 0 {
            return Err(Error::arg("buffer capacity must be at least 1"));
        }
        let mut q = vec![1.0 / n as f64; n];
        q[client] = f64::NEG_INFINITY;
        Ok(Self {
            client,
            q,
            t: 0,
            buffer: Vec::with_capacity(capacity),
            capacity,
            history: Vec::new(),
        })
    }

    /// Start from explicit Q values (the self entry is overwritten with the mask).
    pub fn with_q(client: usize, mut q: Vec<f64>, capacity: usize) -> Result<Self> {
        let mut s = Self::new(client, q.len(), capacity)?;
        q[client] = f64::NEG_INFINITY;
        s.q = q;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Number of Q updates applied so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn buffer(&self) -> &[(usize, f64)] {
        &self.buffer
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.capacity
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.q.len()).filter(move |&j| j != self.client)
    }

    /// Append `(action, global reward)`; returns whether the buffer is now full.
    pub fn push(&mut self, action: usize, reward: f64) -> Result<bool> {
        if self.is_full() {
            return Err(Error::state(format!("agent {} buffer is full; update first", self.client)));
        }
        if action >= self.q.len() || action == self.client {
            return Err(Error::arg(format!("agent {} cannot take action {action}", self.client)));
        }
        self.buffer.push((action, reward));
        Ok(self.is_full())
    }

    pub fn flush(&mut self) {
        self.buffer.clear();
    }
}

/// Exploration/exploitation mix over candidate transmitters:
/// `w_j = gamma * q_j / sum(q) + (1 - gamma) * U_j`, normalized, with the
/// agent's own entry forced to zero. One fresh `U_j ~ U[0, 1]` is drawn per
/// candidate on every call.
pub fn policy_probabilities(qs: &QState, gamma: f64, rng: &mut SimRng) -> Vec<f64> {
    let n = qs.n();
    let q_sum: f64 = qs.candidates().map(|j| qs.q[j]).sum();
    let mut weights = vec![0.0; n];
    for j in qs.candidates() {
        let u: f64 = rng.random();
        let exploit = if q_sum > 0.0 { qs.q[j] / q_sum } else { 0.0 };
        weights[j] = gamma * exploit + (1.0 - gamma) * u;
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() && weights.iter().all(|w| *w >= 0.0) {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        let uniform = 1.0 / (n - 1) as f64;
        for j in 0..n {
            weights[j] = if j == qs.client { 0.0 } else { uniform };
        }
    }
    weights
}

/// Categorical draw. Zero-probability entries are never returned.
pub fn sample_action(pi: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = pi.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if acc > target {
                return j;
            }
        }
    }
    last
}

/// Local reward of the most frequent action in the buffer. Frequency ties go
/// to the higher local reward, then the lower index.
pub fn modal_link_reward(qs: &QState, local_rewards_by_action: &[f64]) -> Result<f64> {
    if qs.buffer.is_empty() {
        return Err(Error::state(format!("agent {} buffer is empty", qs.client)));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, _) in &qs.buffer {
        *counts.entry(a).or_default() += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (&a, &c) in &counts {
        best = match best {
            None => Some((a, c)),
            Some((ba, bc)) => {
                let better = c > bc || (c == bc && local_rewards_by_action[a] > local_rewards_by_action[ba]);
                Some(if better { (a, c) } else { (ba, bc) })
            }
        };
    }
    let (action, _) = best.expect("nonempty buffer");
    Ok(local_rewards_by_action[action])
}

pub fn network_performance(modal_rewards: &[f64]) -> f64 {
    modal_rewards.iter().sum::<f64>() / modal_rewards.len() as f64
}

/// Add the per-action mean buffered reward to each action that occurs in the
/// buffer, then clear the buffer and log a snapshot.
///
/// If any unmasked entry ends up `<= 0` all unmasked entries are shifted so the
/// minimum becomes a small positive floor; this keeps the policy's
/// normalization well defined and leaves the argmax unchanged.
pub fn q_update(qs: &mut QState) {
    let mut groups: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for &(a, r) in &qs.buffer {
        let g = groups.entry(a).or_insert((0.0, 0));
        g.0 += r;
        g.1 += 1;
    }
    for (a, (sum, count)) in groups {
        qs.q[a] += sum / count as f64;
    }
    let min = qs.candidates().map(|j| qs.q[j]).fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        let shift = Q_FLOOR - min;
        let client = qs.client;
        for (j, v) in qs.q.iter_mut().enumerate() {
            if j != client {
                *v += shift;
            }
        }
    }
    qs.buffer.clear();
    qs.t += 1;
    qs.history.push(qs.q.clone());
}

/// Greedy edge: the unmasked action with the largest Q value, ties to the
/// lowest index.
pub fn optimal_policy(qs: &QState) -> usize {
    let mut best = None;
    for j in qs.candidates() {
        match best {
            Some(b) if qs.q[j] <= qs.q[b] => {}
            _ => best = Some(j),
        }
    }
    best.expect("at least one candidate")
}
