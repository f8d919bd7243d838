use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Variant};
use crate::autoenc::{probe_eval, probe_train, Model};
use crate::channel::{failure_probability, generate_rss, RssMatrix};
use crate::datastore::{
    build_trust_matrix, load_dataset, partition_noniid, split_holdout, Dataset, LocalDataset, TrustMatrix,
};
use crate::embedding::{cluster_local, fit_shared_pca, local_moments, ClusterModel, PcaBasis};
use crate::error::{Result, StageContext};
use crate::exchange::{audit_provenance, execute_exchange, pretrain_baseline, ExchangeInputs, ExchangeReport, TrustViolation};
use crate::federation::{run_fl, FlRun, Scheme};
use crate::graphrl::{
    discover_graph, dissimilarity_report, inter_client_distances, percentile, uniform_graph, Discovery,
    DissimilarityReport, Graph, RewardParams, RewardTable,
};
use crate::linalg::Matrix;
use crate::rng::{derive, label};

/// Seed for a named pipeline stage.
pub fn stage_seed(cfg: &ExperimentConfig, stage: &str) -> u64 {
    derive(cfg.master_seed, &[label(stage)])
}

/// Everything shared by the variants: partitioned and clustered client data,
/// the channel, trust tables and the pre-exchange dissimilarity.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub clients: Vec<LocalDataset>,
    pub holdout: Dataset,
    pub basis: PcaBasis,
    pub cluster_models: Vec<ClusterModel>,
    pub trust: Vec<TrustMatrix>,
    pub rss: RssMatrix,
    pub p_fail: Matrix,
    pub beta: f64,
    pub lambda_pre: DissimilarityReport,
    pub init: Model,
}

fn cluster_all(cfg: &ExperimentConfig, clients: &mut [LocalDataset], basis: &PcaBasis) -> Result<Vec<ClusterModel>> {
    let seed = stage_seed(cfg, "kmeans");
    clients
        .par_iter_mut()
        .map(|ld| cluster_local(ld, basis, seed, cfg.embedding.max_iters, cfg.embedding.tol))
        .collect()
}

fn trust_tables(cfg: &ExperimentConfig, clients: &[LocalDataset]) -> Result<Vec<TrustMatrix>> {
    let n = clients.len();
    let seed = stage_seed(cfg, "trust");
    clients
        .iter()
        .map(|ld| build_trust_matrix(ld.client_id, n, ld.k, &cfg.trust, seed))
        .collect()
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let full = load_dataset(&cfg.dataset).stage("load")?;
    let (train, holdout) =
        split_holdout(&full, cfg.partition.holdout_fraction, stage_seed(cfg, "holdout")).stage("load")?;
    let mut clients = partition_noniid(&train, &cfg.partition_spec()).stage("partition")?;

    let stats = clients
        .iter()
        .map(|ld| local_moments(&ld.points))
        .collect::<Result<Vec<_>>>()
        .stage("embedding")?;
    let basis = fit_shared_pca(&stats, cfg.embedding.components.min(train.dim())).stage("embedding")?;
    let cluster_models = cluster_all(cfg, &mut clients, &basis).stage("embedding")?;
    let trust = trust_tables(cfg, &clients).stage("trust")?;

    let rss = generate_rss(&cfg.channel, clients.len(), stage_seed(cfg, "channel")).stage("channel")?;
    let p_fail = failure_probability(&rss, cfg.channel.rate, cfg.channel.noise_power).stage("channel")?;

    let beta = match cfg.reward.beta {
        Some(b) => b,
        None => percentile(&inter_client_distances(&cluster_models), cfg.reward.beta_percentile).stage("dissimilarity")?,
    };
    let lambda_pre = dissimilarity_report(&cluster_models, &trust, beta).stage("dissimilarity")?;

    let dims = cfg.model.dims(train.dim());
    let init = Model::init(&dims, cfg.model.activation, stage_seed(cfg, "model-init")).stage("model")?;
    Ok(Prepared {
        clients,
        holdout,
        basis,
        cluster_models,
        trust,
        rss,
        p_fail,
        beta,
        lambda_pre,
        init,
    })
}

pub fn reward_params(cfg: &ExperimentConfig, beta: f64) -> RewardParams {
    RewardParams {
        alpha1: cfg.reward.alpha1,
        alpha2: cfg.reward.alpha2,
        beta,
    }
}

/// Q-learning graph discovery on the prepared instance.
pub fn discover(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Discovery> {
    let params = reward_params(cfg, prep.beta);
    params.validate().stage("graph")?;
    let table = RewardTable::new(&prep.lambda_pre.lambda, &prep.p_fail, &params).stage("graph")?;
    discover_graph(&table, &cfg.reward.discovery(), stage_seed(cfg, "discovery")).stage("graph")
}

pub fn baseline_graph(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Graph> {
    uniform_graph(prep.clients.len(), stage_seed(cfg, "uniform-graph")).stage("graph")
}

/// Result of exchanging data along one graph.
#[derive(Debug, Clone)]
pub struct ExchangeOutcome {
    pub graph: Graph,
    pub datasets: Vec<LocalDataset>,
    pub report: ExchangeReport,
    /// Dissimilarity after re-clustering with the grown cluster counts.
    pub lambda_post: DissimilarityReport,
    pub violations: Vec<TrustViolation>,
}

pub fn exchange_along(cfg: &ExperimentConfig, prep: &Prepared, graph: &Graph) -> Result<ExchangeOutcome> {
    let eta = cfg.exchange.pretrain_lr;
    let steps = cfg.exchange.pretrain_steps;
    let (models, baselines): (Vec<Model>, Vec<_>) = prep
        .clients
        .par_iter()
        .map(|ld| pretrain_baseline(&prep.init, ld, eta, steps))
        .collect::<Result<Vec<_>>>()
        .stage("exchange")?
        .into_iter()
        .unzip();
    let inputs = ExchangeInputs {
        graph,
        dissimilarity: &prep.lambda_pre,
        trust: &prep.trust,
        models: &models,
        baselines: &baselines,
        datasets: &prep.clients,
    };
    let (mut datasets, report) = execute_exchange(&inputs, &cfg.exchange, stage_seed(cfg, "exchange")).stage("exchange")?;
    let violations = audit_provenance(&datasets, &prep.trust);

    let post_models = cluster_all(cfg, &mut datasets, &prep.basis).stage("recluster")?;
    let post_trust = trust_tables(cfg, &datasets).stage("recluster")?;
    let lambda_post = dissimilarity_report(&post_models, &post_trust, prep.beta).stage("recluster")?;
    Ok(ExchangeOutcome {
        graph: graph.clone(),
        datasets,
        report,
        lambda_post,
        violations,
    })
}

/// One federated run of one variant under one scheme.
#[derive(Debug, Clone)]
pub struct FlResult {
    pub variant: Variant,
    pub scheme: Scheme,
    pub straggler_count: usize,
    pub run: FlRun,
    /// Loss of the final global model on the clients' data before any exchange.
    pub original_loss: f64,
    pub probe_accuracy: f64,
}

impl FlResult {
    pub fn final_loss(&self) -> f64 {
        self.run.final_loss()
    }
}

fn points(datasets: &[LocalDataset]) -> Vec<Matrix> {
    datasets.iter().map(|ld| ld.points.clone()).collect()
}

pub fn train_variant(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    datasets: &[LocalDataset],
    variant: Variant,
    scheme: Scheme,
    straggler_count: usize,
) -> Result<FlResult> {
    let fl = cfg.fl.config(scheme, straggler_count);
    let run = run_fl(&fl, &points(datasets), &prep.init, stage_seed(cfg, "fl")).stage("fl")?;
    let original_loss = crate::federation::global_loss(&run.global, &points(&prep.clients)).stage("fl")?;
    let probe_accuracy = probe_accuracy(cfg, prep, &run.global).stage("probe")?;
    Ok(FlResult {
        variant,
        scheme,
        straggler_count,
        run,
        original_loss,
        probe_accuracy,
    })
}

/// Linear probe on the frozen global encoder: half of the server holdout
/// trains the head, the other half measures accuracy.
pub fn probe_accuracy(cfg: &ExperimentConfig, prep: &Prepared, global: &Model) -> Result<f64> {
    let (fit, test) = split_holdout(&prep.holdout, 0.5, stage_seed(cfg, "probe-split"))?;
    let n_classes = prep.holdout.n_classes;
    let head = probe_train(
        &global.embed(&fit.points)?,
        fit.labels().for_evaluation(),
        n_classes,
        &cfg.probe,
        stage_seed(cfg, "probe"),
    )?;
    probe_eval(&head, &global.embed(&test.points)?, test.labels().for_evaluation())
}

/// Link failure probabilities of the edges of `graph`.
pub fn link_failures(graph: &Graph, p_fail: &Matrix) -> Vec<(usize, usize, f64)> {
    graph
        .edges()
        .into_iter()
        .map(|(j, i)| (i, j, p_fail.get(i, j)))
        .collect()
}

pub fn mean_link_failure(graph: &Graph, p_fail: &Matrix) -> f64 {
    let links = link_failures(graph, p_fail);
    links.iter().map(|l| l.2).sum::<f64>() / links.len() as f64
}

#[derive(Debug, Clone)]
pub struct MetricsBundle {
    pub config_hash: String,
    pub seed: u64,
    pub prepared: Prepared,
    pub discovery: Option<Discovery>,
    pub uniform: Option<Graph>,
    pub exchanges: BTreeMap<Variant, ExchangeOutcome>,
    pub runs: Vec<FlResult>,
    /// Stage names in execution order.
    pub stages: Vec<&'static str>,
}

impl MetricsBundle {
    pub fn run(&self, variant: Variant, scheme: Scheme) -> Option<&FlResult> {
        self.runs
            .iter()
            .find(|r| r.variant == variant && r.scheme == scheme && r.straggler_count == 0)
    }
}

/// Datasets each variant trains on.
fn variant_datasets<'a>(
    prep: &'a Prepared,
    exchanges: &'a BTreeMap<Variant, ExchangeOutcome>,
    variant: Variant,
) -> &'a [LocalDataset] {
    match exchanges.get(&variant) {
        Some(x) => &x.datasets,
        None => &prep.clients,
    }
}

fn exchanges_for(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    variants: &[Variant],
    stages: &mut Vec<&'static str>,
) -> Result<(Option<Discovery>, Option<Graph>, BTreeMap<Variant, ExchangeOutcome>)> {
    let mut discovery = None;
    let mut uniform = None;
    let mut exchanges = BTreeMap::new();
    if variants.contains(&Variant::Proposed) {
        stages.push("graph");
        let d = discover(cfg, prep)?;
        stages.push("exchange");
        exchanges.insert(Variant::Proposed, exchange_along(cfg, prep, &d.graph)?);
        discovery = Some(d);
    }
    if variants.contains(&Variant::Uniform) {
        stages.push("uniform-graph");
        let g = baseline_graph(cfg, prep)?;
        stages.push("exchange");
        exchanges.insert(Variant::Uniform, exchange_along(cfg, prep, &g)?);
        uniform = Some(g);
    }
    Ok((discovery, uniform, exchanges))
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<MetricsBundle> {
    cfg.validate()?;
    let mut stages = vec!["prepare"];
    let prep = prepare(cfg)?;
    let (discovery, uniform, exchanges) = exchanges_for(cfg, &prep, &cfg.variants, &mut stages)?;

    stages.push("fl");
    let jobs: Vec<(Variant, Scheme)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.fl.schemes.iter().map(move |&s| (v, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(v, s)| train_variant(cfg, &prep, variant_datasets(&prep, &exchanges, v), v, s, cfg.fl.straggler_count))
        .collect::<Result<Vec<_>>>()?;

    Ok(MetricsBundle {
        config_hash: cfg.hash()?,
        seed: cfg.master_seed,
        prepared: prep,
        discovery,
        uniform,
        exchanges,
        runs,
        stages,
    })
}

/// Final global loss per (variant, straggler count).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: Variant,
    pub scheme: Scheme,
    pub straggler_count: usize,
    pub final_loss: f64,
    pub probe_accuracy: f64,
}

pub fn straggler_sweep(cfg: &ExperimentConfig, counts: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let n = cfg.partition.n_clients;
    if let Some(&c) = counts.iter().find(|&&c| c >= n) {
        return Err(crate::error::Error::Stage {
            stage: "sweep",
            source: Box::new(crate::error::Error::Argument(format!("{c} stragglers out of {n} clients"))),
        });
    }
    let prep = prepare(cfg)?;
    let mut stages = Vec::new();
    let (_, _, exchanges) = exchanges_for(cfg, &prep, &cfg.variants, &mut stages)?;
    let scheme = cfg.sweep.scheme;
    let jobs: Vec<(Variant, usize)> = cfg
        .variants
        .iter()
        .flat_map(|&v| counts.iter().map(move |&c| (v, c)))
        .collect();
    jobs.par_iter()
        .map(|&(v, c)| {
            let r = train_variant(cfg, &prep, variant_datasets(&prep, &exchanges, v), v, scheme, c)?;
            Ok(SweepRow {
                variant: v,
                scheme,
                straggler_count: c,
                final_loss: r.final_loss(),
                probe_accuracy: r.probe_accuracy,
            })
        })
        .collect()
}
