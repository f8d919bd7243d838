use rand::seq::IndexedRandom;

use super::agent::{modal_link_reward, network_performance, optimal_policy, policy_probabilities, q_update, sample_action, QState};
use super::reward::{global_reward, GammaSchedule, RewardShares, RewardTable};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Directed exchange graph in which every receiver has at most one transmitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    /// `incoming[i] = Some(j)` means `j` transmits to `i`.
    pub incoming: Vec<Option<usize>>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.incoming.len()
    }

    /// `(transmitter, receiver)` pairs, ordered by receiver.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.incoming
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (j, i)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        for (i, j) in self.incoming.iter().enumerate() {
            if let Some(j) = *j {
                if j == i {
                    return Err(Error::state(format!("self-loop at client {i}")));
                }
                if j >= n {
                    return Err(Error::state(format!("client {i} receives from unknown client {j}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryConfig {
    pub episodes: usize,
    pub buffer: usize,
    pub gamma: GammaSchedule,
}

impl DiscoveryConfig {
    /// Annealing horizon equal to the number of Q updates that will happen.
    pub fn new(episodes: usize, buffer: usize) -> Self {
        Self {
            episodes,
            buffer,
            gamma: GammaSchedule {
                horizon: if buffer == 0 { 0 } else { episodes / buffer },
            },
        }
    }

    pub fn updates(&self) -> usize {
        self.episodes / self.buffer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub client: usize,
    pub action: usize,
    pub r_local: f64,
    pub r_global: f64,
    /// Network performance from the most recent Q update (0 before the first).
    pub r_net: f64,
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub graph: Graph,
    pub trace: Vec<TraceRow>,
    pub agents: Vec<QState>,
    /// Network performance after each Q update.
    pub r_net_history: Vec<f64>,
}

impl Discovery {
    pub fn updates(&self) -> usize {
        self.r_net_history.len()
    }
}

/// Run lockstep episodes over a static reward table and extract each agent's
/// greedy edge.
pub fn discover_graph(table: &RewardTable, cfg: &DiscoveryConfig, seed: u64) -> Result<Discovery> {
    if cfg.episodes == 0 || cfg.buffer == 0 {
        return Err(Error::arg("episodes and buffer size must be at least 1"));
    }
    let n = table.n();
    let mut agents = (0..n)
        .map(|i| QState::new(i, n, cfg.buffer))
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<SimRng> = (0..n)
        .map(|i| rng::stream(seed, &[rng::label("discovery"), i as u64]))
        .collect();
    let mut r_net_prev = 0.0;
    let mut r_net_history = Vec::new();
    let mut trace = Vec::with_capacity(cfg.episodes * n);

    for episode in 0..cfg.episodes {
        let gamma = cfg.gamma.at(agents[0].t());
        let actions: Vec<usize> = agents
            .iter()
            .zip(rngs.iter_mut())
            .map(|(qs, rng)| {
                let pi = policy_probabilities(qs, gamma, rng);
                sample_action(&pi, rng)
            })
            .collect();
        let local: Vec<f64> = actions.iter().enumerate().map(|(i, &j)| table.get(i, j)).collect();
        let shares = RewardShares::from_complete(&local);
        let mut full = false;
        for i in 0..n {
            let r = global_reward(local[i], &shares, r_net_prev, gamma)?;
            full = agents[i].push(actions[i], r)?;
            trace.push(TraceRow {
                episode,
                client: i,
                action: actions[i],
                r_local: local[i],
                r_global: r,
                r_net: r_net_prev,
            });
        }
        if full {
            let modal = agents
                .iter()
                .enumerate()
                .map(|(i, qs)| modal_link_reward(qs, table.row(i)))
                .collect::<Result<Vec<_>>>()?;
            r_net_prev = network_performance(&modal);
            r_net_history.push(r_net_prev);
            agents.iter_mut().for_each(q_update);
        }
    }
    agents.iter_mut().for_each(QState::flush);

    let graph = Graph {
        incoming: agents.iter().map(|qs| Some(optimal_policy(qs))).collect(),
    };
    graph.validate()?;
    Ok(Discovery {
        graph,
        trace,
        agents,
        r_net_history,
    })
}

/// Baseline graph: every receiver takes one transmitter uniformly at random.
pub fn uniform_graph(n: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::arg("a graph needs at least two clients"));
    }
    let mut rng = rng::stream(seed, &[rng::label("uniform-graph")]);
    let incoming = (0..n)
        .map(|i| {
            let candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            candidates.choose(&mut rng).copied()
        })
        .collect();
    Ok(Graph { incoming })
}
