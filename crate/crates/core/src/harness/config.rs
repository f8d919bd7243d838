use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoenc::{Activation, ProbeConfig};
use crate::channel::ChannelParams;
use crate::datastore::{DataSource, LabelLayout, PartitionSpec, TrustPolicy};
use crate::error::{Error, Result};
use crate::exchange::ExchangeParams;
use crate::federation::{FlConfig, Scheme};
use crate::graphrl::{DiscoveryConfig, GammaSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Graph learned by the Q-learning agents, then exchange.
    Proposed,
    /// Uniformly random graph, same exchange machinery.
    Uniform,
    /// No exchange.
    NonIid,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Proposed, Variant::Uniform, Variant::NonIid];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::Uniform => "uniform",
            Variant::NonIid => "non-iid",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionBlock {
    #[serde(default = "defaults::n_clients")]
    pub n_clients: usize,
    #[serde(default = "defaults::classes_per_client")]
    pub classes_per_client: usize,
    #[serde(default = "defaults::layout")]
    pub layout: LabelLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_per_client: Option<Vec<usize>>,
    /// Stratified labelled share kept at the server for the probe.
    #[serde(default = "defaults::holdout_fraction")]
    pub holdout_fraction: f64,
}

impl Default for PartitionBlock {
    fn default() -> Self {
        Self {
            n_clients: defaults::n_clients(),
            classes_per_client: defaults::classes_per_client(),
            layout: defaults::layout(),
            max_per_class: None,
            k_per_client: None,
            holdout_fraction: defaults::holdout_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingBlock {
    #[serde(default = "defaults::components")]
    pub components: usize,
    #[serde(default = "defaults::kmeans_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::kmeans_tol")]
    pub tol: f64,
}

impl Default for EmbeddingBlock {
    fn default() -> Self {
        Self {
            components: defaults::components(),
            max_iters: defaults::kmeans_iters(),
            tol: defaults::kmeans_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardBlock {
    #[serde(default = "defaults::one")]
    pub alpha1: f64,
    #[serde(default = "defaults::one")]
    pub alpha2: f64,
    /// Fixed centroid-distance threshold. When absent, `beta_percentile` of
    /// all inter-client centroid distances is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "defaults::beta_percentile")]
    pub beta_percentile: f64,
    #[serde(default = "defaults::episodes")]
    pub episodes: usize,
    #[serde(default = "defaults::buffer")]
    pub buffer: usize,
    /// Number of Q updates over which gamma rises from 0 to 1; defaults to
    /// the total number of updates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_horizon: Option<usize>,
}

impl Default for RewardBlock {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            beta: None,
            beta_percentile: defaults::beta_percentile(),
            episodes: defaults::episodes(),
            buffer: defaults::buffer(),
            gamma_horizon: None,
        }
    }
}

impl RewardBlock {
    pub fn discovery(&self) -> DiscoveryConfig {
        let mut d = DiscoveryConfig::new(self.episodes, self.buffer);
        if let Some(h) = self.gamma_horizon {
            d.gamma = GammaSchedule { horizon: h };
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// Encoder layer sizes after the input; the decoder mirrors them.
    #[serde(default = "defaults::encoder")]
    pub encoder: Vec<usize>,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            encoder: defaults::encoder(),
            activation: defaults::activation(),
        }
    }
}

impl ModelBlock {
    pub fn dims(&self, input: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.encoder);
        dims.extend(self.encoder.iter().rev().skip(1));
        dims.push(input);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlBlock {
    #[serde(default = "defaults::schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "defaults::total_iters")]
    pub total_iters: usize,
    #[serde(default = "defaults::tau_a")]
    pub tau_a: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::mu")]
    pub mu: f64,
    #[serde(default)]
    pub straggler_count: usize,
}

impl Default for FlBlock {
    fn default() -> Self {
        Self {
            schemes: defaults::schemes(),
            total_iters: defaults::total_iters(),
            tau_a: defaults::tau_a(),
            lr: defaults::lr(),
            batch_size: defaults::batch_size(),
            mu: defaults::mu(),
            straggler_count: 0,
        }
    }
}

impl FlBlock {
    pub fn config(&self, scheme: Scheme, straggler_count: usize) -> FlConfig {
        FlConfig {
            scheme,
            total_iters: self.total_iters,
            tau_a: self.tau_a,
            lr: self.lr,
            batch_size: self.batch_size,
            mu: self.mu,
            straggler_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default = "defaults::sweep_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "defaults::sweep_scheme")]
    pub scheme: Scheme,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            counts: defaults::sweep_counts(),
            scheme: defaults::sweep_scheme(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::master_seed")]
    pub master_seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::variants")]
    pub variants: Vec<Variant>,
    pub dataset: DataSource,
    #[serde(default)]
    pub partition: PartitionBlock,
    #[serde(default)]
    pub embedding: EmbeddingBlock,
    #[serde(default = "defaults::trust")]
    pub trust: TrustPolicy,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub reward: RewardBlock,
    #[serde(default)]
    pub exchange: ExchangeParams,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub fl: FlBlock,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sweep: SweepBlock,
}

mod defaults {
    use super::*;

    pub fn master_seed() -> u64 {
        1
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("fedlink-out")
    }
    pub fn variants() -> Vec<Variant> {
        Variant::ALL.to_vec()
    }
    pub fn n_clients() -> usize {
        10
    }
    pub fn classes_per_client() -> usize {
        3
    }
    pub fn layout() -> LabelLayout {
        LabelLayout::Circular
    }
    pub fn holdout_fraction() -> f64 {
        0.1
    }
    pub fn components() -> usize {
        16
    }
    pub fn kmeans_iters() -> usize {
        100
    }
    pub fn kmeans_tol() -> f64 {
        1e-10
    }
    pub fn trust() -> TrustPolicy {
        TrustPolicy::Full
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn beta_percentile() -> f64 {
        25.0
    }
    pub fn episodes() -> usize {
        600
    }
    pub fn buffer() -> usize {
        90
    }
    pub fn encoder() -> Vec<usize> {
        vec![8]
    }
    pub fn activation() -> Activation {
        Activation::Sigmoid
    }
    pub fn schemes() -> Vec<Scheme> {
        Scheme::ALL.to_vec()
    }
    pub fn total_iters() -> usize {
        1500
    }
    pub fn tau_a() -> usize {
        10
    }
    pub fn lr() -> f64 {
        10.0
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn mu() -> f64 {
        0.01
    }
    pub fn sweep_counts() -> Vec<usize> {
        vec![0, 3, 6, 9]
    }
    pub fn sweep_scheme() -> Scheme {
        Scheme::FedAvg
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| Error::Config {
            path: path.into(),
            message,
        };
        if self.variants.is_empty() {
            return Err(bad("variants", "at least one variant is required".into()));
        }
        if self.fl.schemes.is_empty() {
            return Err(bad("fl.schemes", "at least one scheme is required".into()));
        }
        let n = self.partition.n_clients;
        if n < 2 {
            return Err(bad("partition.n_clients", format!("{n} clients; at least 2 are needed")));
        }
        if !(0.0..1.0).contains(&self.partition.holdout_fraction) {
            return Err(bad("partition.holdout_fraction", "must lie in [0, 1)".into()));
        }
        if self.embedding.components == 0 {
            return Err(bad("embedding.components", "must be at least 1".into()));
        }
        self.channel
            .validate()
            .map_err(|e| bad("channel", e.to_string()))?;
        let r = &self.reward;
        if !(r.alpha1 >= 0.0 && r.alpha2 >= 0.0) {
            return Err(bad("reward", "alpha1 and alpha2 must be nonnegative".into()));
        }
        if let Some(b) = r.beta {
            if !(b > 0.0) {
                return Err(bad("reward.beta", "must be positive".into()));
            }
        }
        if !(0.0..=100.0).contains(&r.beta_percentile) {
            return Err(bad("reward.beta_percentile", "must lie in [0, 100]".into()));
        }
        if r.episodes == 0 || r.buffer == 0 {
            return Err(bad("reward", "episodes and buffer must be at least 1".into()));
        }
        self.exchange
            .validate()
            .map_err(|e| bad("exchange", e.to_string()))?;
        if self.model.encoder.is_empty() || self.model.encoder.contains(&0) {
            return Err(bad("model.encoder", "needs at least one positive layer size".into()));
        }
        for scheme in &self.fl.schemes {
            self.fl
                .config(*scheme, self.fl.straggler_count)
                .validate(n)
                .map_err(|e| bad("fl", e.to_string()))?;
        }
        if let Some(&c) = self.sweep.counts.iter().find(|&&c| c >= n) {
            return Err(bad("sweep.counts", format!("{c} stragglers out of {n} clients")));
        }
        if self.probe.iters == 0 || !(self.probe.lr > 0.0) {
            return Err(bad("probe", "iters and lr must be positive".into()));
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            n_clients: self.partition.n_clients,
            classes_per_client: self.partition.classes_per_client,
            seed: crate::rng::derive(self.master_seed, &[crate::rng::label("partition")]),
            layout: self.partition.layout,
            max_per_class: self.partition.max_per_class,
            k_per_client: self.partition.k_per_client.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: String::new(),
            message: e.to_string(),
        })
    }

    /// Hash of the resolved config. The output directory is excluded so a
    /// relocated run keeps its identity.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        path: String::new(),
        message: e.to_string(),
    })?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
format = "synthetic-gmm"
classes = 10
d = 16
per_class = 50
seed = 3
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.partition.n_clients, 10);
        assert_eq!(cfg.reward.episodes, 600);
        assert_eq!(cfg.reward.buffer, 90);
        assert_eq!(cfg.exchange.reserve_size, 20);
        assert_eq!(cfg.fl.total_iters, 1500);
        assert_eq!(cfg.variants, Variant::ALL.to_vec());
        assert_eq!(cfg.model.dims(16), vec![16, 8, 16]);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MINIMAL}\n[reward]\nalpha3 = 1.0\n");
        match parse_config_str(&text) {
            Err(Error::Config { path, message }) => {
                assert!(message.contains("alpha3"), "{message}");
                assert!(path.contains("reward"), "{path}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_the_key_path() {
        let text = format!("{MINIMAL}\n[fl]\ntau_a = \"ten\"\n");
        match parse_config_str(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "fl.tau_a"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_config_str("master_seed = 1\n"), Err(Error::Config { .. })));
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = format!("{MINIMAL}\n[reward]\nbeta = 0.4\n[trust]\npolicy = \"bernoulli\"\np = 0.5\n");
        let cfg = parse_config_str(&text).unwrap();
        let again = parse_config_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = parse_config_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.master_seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn semantic_validation() {
        let text = format!("variants = []\n{MINIMAL}");
        assert!(matches!(parse_config_str(&text), Err(Error::Config { path, .. }) if path == "variants"));
        let text = format!("{MINIMAL}\n[sweep]\ncounts = [0, 10]\n");
        assert!(matches!(parse_config_str(&text), Err(Error::Config { path, .. }) if path == "sweep.counts"));
    }
}
