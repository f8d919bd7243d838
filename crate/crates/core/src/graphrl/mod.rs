//! Decentralized Q-learning discovery of the D2D exchange graph.
//!
//! Every client is an independent agent choosing one incoming edge. Its local
//! reward trades cluster dissimilarity against link failure probability, the
//! shared global reward adds a network-performance term, and a buffer of
//! `(action, reward)` tuples is folded into the Q-vector every `M` episodes.

mod agent;
mod discover;
mod reward;

pub use agent::{
    modal_link_reward, network_performance, optimal_policy, policy_probabilities, q_update, sample_action, QState,
};
pub use discover::{discover_graph, uniform_graph, Discovery, DiscoveryConfig, Graph, TraceRow};
pub use reward::{
    dissimilarity, dissimilarity_report, global_reward, inter_client_distances, local_reward, percentile,
    Dissimilarity, DissimilarityReport, GammaSchedule, RewardParams, RewardShares, RewardTable,
};
