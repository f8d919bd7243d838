use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// How a transmitter decides which receivers may get which of its clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrustPolicy {
    Full,
    /// Each (receiver, cluster) entry is trusted independently with probability `p`.
    Bernoulli { p: f64 },
    /// Full trust except for the listed `[receiver, cluster]` pairs.
    DenyList { deny: Vec<[usize; 2]> },
}

/// Binary permission table owned by transmitter `owner`: entry `(i, m)` is 1
/// when `owner` may send its cluster `m` to receiver `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustMatrix {
    pub owner: usize,
    n_clients: usize,
    k: usize,
    entries: Vec<u8>,
}

impl TrustMatrix {
    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, receiver: usize, cluster: usize) -> bool {
        self.entries[receiver * self.k + cluster] == 1
    }

    pub fn row(&self, receiver: usize) -> Vec<bool> {
        (0..self.k).map(|m| self.get(receiver, m)).collect()
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|&e| usize::from(e)).sum()
    }
}

pub fn build_trust_matrix(
    owner: usize,
    n_clients: usize,
    k: usize,
    policy: &TrustPolicy,
    seed: u64,
) -> Result<TrustMatrix> {
    if owner >= n_clients {
        return Err(Error::arg(format!("owner {owner} >= n_clients {n_clients}")));
    }
    let mut entries = vec![1u8; n_clients * k];
    match policy {
        TrustPolicy::Full => {}
        TrustPolicy::Bernoulli { p } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::arg(format!("trust probability {p} not in [0, 1]")));
            }
            let mut rng = rng::stream(seed, &[rng::label("trust"), owner as u64]);
            for e in &mut entries {
                *e = u8::from(rng.random_bool(*p));
            }
        }
        TrustPolicy::DenyList { deny } => {
            for &[receiver, cluster] in deny {
                if receiver < n_clients && cluster < k {
                    entries[receiver * k + cluster] = 0;
                }
            }
        }
    }
    entries[owner * k..(owner + 1) * k].fill(0);
    Ok(TrustMatrix {
        owner,
        n_clients,
        k,
        entries,
    })
}
