//! Experiment configuration, end-to-end orchestration and metric files.

mod config;
mod emit;
mod pipeline;

pub use config::{
    parse_config, parse_config_str, EmbeddingBlock, ExperimentConfig, FlBlock, ModelBlock, PartitionBlock, RewardBlock,
    SweepBlock, Variant,
};
pub use pipeline::{
    baseline_graph, discover, exchange_along, link_failures, mean_link_failure, prepare, probe_accuracy, reward_params,
    run_pipeline, stage_seed, straggler_sweep, train_variant, ExchangeOutcome, FlResult, MetricsBundle, Prepared,
    SweepRow,
};
pub use emit::{
    bundle_artifacts, config_artifact, emit_heatmap_data, graph_artifacts, header_line, link_quality, sweep_artifact, write_artifacts,
    Artifact, HeatmapAverages, LinkQuality, Manifest, ManifestEntry, ARTIFACT_VERSION,
};
