use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Variant};
use super::pipeline::{link_failures, MetricsBundle, SweepRow};
use crate::error::{Error, Result};
use crate::graphrl::{Graph, TraceRow};
use crate::linalg::Matrix;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// First line of every emitted CSV.
pub fn header_line(config_hash: &str, seed: u64) -> String {
    format!("# fedlink {ARTIFACT_VERSION} config_hash={config_hash} seed={seed}\n")
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// An in-memory CSV artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

struct CsvBuilder {
    name: String,
    writer: csv::Writer<Vec<u8>>,
}

impl CsvBuilder {
    fn new(name: impl Into<String>, config_hash: &str, seed: u64, columns: &[&str]) -> Result<Self> {
        let mut buf = Vec::new();
        buf.extend_from_slice(header_line(config_hash, seed).as_bytes());
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(columns)?;
        Ok(Self {
            name: name.into(),
            writer,
        })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    fn finish(self) -> Result<Artifact> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| Error::Io {
                path: PathBuf::from(&self.name),
                source: std::io::Error::other(e.to_string()),
            })?;
        Ok(Artifact { name: self.name, bytes })
    }
}

fn matrix_csv(name: &str, hash: &str, seed: u64, m: &Matrix) -> Result<Artifact> {
    let mut cols = vec!["receiver".to_string()];
    cols.extend((0..m.cols()).map(|j| j.to_string()));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut b = CsvBuilder::new(name, hash, seed, &col_refs)?;
    for (i, row) in m.iter_rows().enumerate() {
        b.row(std::iter::once(i.to_string()).chain(row.iter().map(|&v| num(v))))?;
    }
    b.finish()
}

/// Off-diagonal means of a pre/post dissimilarity pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapAverages {
    pub pre: f64,
    pub post: f64,
}

/// Both dissimilarity matrices plus a row with their off-diagonal means.
pub fn emit_heatmap_data(
    pre: &Matrix,
    post: &Matrix,
    variant: Variant,
    hash: &str,
    seed: u64,
) -> Result<(Vec<Artifact>, HeatmapAverages)> {
    if pre.rows() != post.rows() || pre.cols() != post.cols() || pre.rows() != pre.cols() {
        return Err(Error::arg(format!(
            "heatmap shapes differ or are not square: {}x{} vs {}x{}",
            pre.rows(),
            pre.cols(),
            post.rows(),
            post.cols()
        )));
    }
    let avg = HeatmapAverages {
        pre: pre.off_diagonal_mean()?,
        post: post.off_diagonal_mean()?,
    };
    let tag = variant.name();
    let files = vec![
        matrix_csv(&format!("lambda_pre_{tag}.csv"), hash, seed, pre)?,
        matrix_csv(&format!("lambda_post_{tag}.csv"), hash, seed, post)?,
    ];
    Ok((files, avg))
}

/// Per-link failure probabilities for the learned and the uniform graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkQuality {
    /// (receiver, transmitter, P_D)
    pub rl: Vec<(usize, usize, f64)>,
    pub uniform: Vec<(usize, usize, f64)>,
}

fn mean_of(links: &[(usize, usize, f64)]) -> f64 {
    links.iter().map(|l| l.2).sum::<f64>() / links.len() as f64
}

impl LinkQuality {
    pub fn rl_mean(&self) -> f64 {
        mean_of(&self.rl)
    }

    pub fn uniform_mean(&self) -> f64 {
        mean_of(&self.uniform)
    }
}

pub fn link_quality(rl: &Graph, uniform: &[Graph], p_fail: &Matrix) -> Result<LinkQuality> {
    rl.validate()?;
    for g in uniform {
        g.validate()?;
    }
    let rl = link_failures(rl, p_fail);
    let uniform: Vec<_> = uniform.iter().flat_map(|g| link_failures(g, p_fail)).collect();
    if uniform.is_empty() {
        return Err(Error::arg("no uniform links to compare against"));
    }
    if rl.is_empty() {
        return Err(Error::arg("learned graph has no links"));
    }
    Ok(LinkQuality { rl, uniform })
}

fn link_quality_csv(lq: &LinkQuality, hash: &str, seed: u64) -> Result<Vec<Artifact>> {
    let mut links = CsvBuilder::new("link_quality.csv", hash, seed, &["method", "receiver", "transmitter", "p_fail"])?;
    for (method, set) in [("rl", &lq.rl), ("uniform", &lq.uniform)] {
        for &(i, j, p) in set {
            links.row([method.to_string(), i.to_string(), j.to_string(), num(p)])?;
        }
    }
    let mut summary = CsvBuilder::new("link_quality_summary.csv", hash, seed, &["method", "links", "mean_p_fail"])?;
    summary.row(["rl".to_string(), lq.rl.len().to_string(), num(lq.rl_mean())])?;
    summary.row(["uniform".to_string(), lq.uniform.len().to_string(), num(lq.uniform_mean())])?;
    Ok(vec![links.finish()?, summary.finish()?])
}

fn graph_csv(name: &str, graph: &Graph, p_fail: &Matrix, hash: &str, seed: u64) -> Result<Artifact> {
    graph.validate()?;
    let mut b = CsvBuilder::new(name, hash, seed, &["transmitter", "receiver", "p_fail"])?;
    for (i, j, p) in link_failures(graph, p_fail) {
        b.row([j.to_string(), i.to_string(), num(p)])?;
    }
    b.finish()
}

fn rl_trace_csv(trace: &[TraceRow], hash: &str, seed: u64) -> Result<Artifact> {
    let mut b = CsvBuilder::new(
        "rl_trace.csv",
        hash,
        seed,
        &["episode", "client", "action", "r_local", "r_global", "r_net"],
    )?;
    for r in trace {
        b.row([
            r.episode.to_string(),
            r.client.to_string(),
            r.action.to_string(),
            num(r.r_local),
            num(r.r_global),
            num(r.r_net),
        ])?;
    }
    b.finish()
}

/// JSON manifest listing every file written for one run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub files: Vec<ManifestEntry>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl Manifest {
    fn new(command: &str, hash: &str, seed: u64, stages: Vec<String>, files: &[Artifact]) -> Self {
        Self {
            tool: "fedlink",
            version: ARTIFACT_VERSION,
            command: command.to_string(),
            config_hash: hash.to_string(),
            seed,
            stages,
            files: files
                .iter()
                .map(|a| ManifestEntry {
                    name: a.name.clone(),
                    bytes: a.bytes.len(),
                    sha256: hex::encode(Sha256::digest(&a.bytes)),
                })
                .collect(),
            summary: serde_json::Value::Null,
        }
    }
}

/// Render every metric file of a full pipeline run.
pub fn bundle_artifacts(cfg: &ExperimentConfig, bundle: &MetricsBundle) -> Result<(Vec<Artifact>, serde_json::Value)> {
    let hash = bundle.config_hash.as_str();
    let seed = bundle.seed;
    let prep = &bundle.prepared;
    let mut files = Vec::new();
    let mut summary = serde_json::Map::new();

    let mut channel = CsvBuilder::new("channel.csv", hash, seed, &["receiver", "transmitter", "rss", "p_fail"])?;
    let n = prep.p_fail.rows();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                channel.row([i.to_string(), j.to_string(), num(prep.rss.w.get(i, j)), num(prep.p_fail.get(i, j))])?;
            }
        }
    }
    files.push(channel.finish()?);

    let pre = prep.lambda_pre.lambda_matrix();
    let mut averages = CsvBuilder::new("lambda_averages.csv", hash, seed, &["variant", "pre_mean", "post_mean"])?;
    for (&variant, outcome) in &bundle.exchanges {
        let (mut heat, avg) = emit_heatmap_data(&pre, &outcome.lambda_post.lambda_matrix(), variant, hash, seed)?;
        files.append(&mut heat);
        averages.row([variant.name().to_string(), num(avg.pre), num(avg.post)])?;
        summary.insert(
            format!("lambda_{}", variant.name()),
            serde_json::json!({ "pre": avg.pre, "post": avg.post }),
        );

        files.push(graph_csv(&format!("graph_{}.csv", variant.name()), &outcome.graph, &prep.p_fail, hash, seed)?);

        let mut ex = CsvBuilder::new(
            format!("exchange_{}.csv", variant.name()),
            hash,
            seed,
            &[
                "receiver",
                "transmitter",
                "cluster",
                "lambda_eligible",
                "baseline",
                "reserve_loss",
                "benefit_pass",
                "points_moved",
            ],
        )?;
        for d in &outcome.report.decisions {
            ex.row([
                d.receiver.to_string(),
                d.transmitter.to_string(),
                d.cluster.to_string(),
                d.lambda.to_string(),
                num(d.baseline),
                num(d.reserve_loss),
                d.benefit_pass.to_string(),
                d.points_moved.to_string(),
            ])?;
        }
        files.push(ex.finish()?);
        summary.insert(
            format!("trust_violations_{}", variant.name()),
            serde_json::json!(outcome.violations.len()),
        );
    }
    if !bundle.exchanges.is_empty() {
        files.push(averages.finish()?);
    }

    if let Some(d) = &bundle.discovery {
        files.push(rl_trace_csv(&d.trace, hash, seed)?);
    }
    if let (Some(d), Some(u)) = (&bundle.discovery, &bundle.uniform) {
        let lq = link_quality(&d.graph, std::slice::from_ref(u), &prep.p_fail)?;
        summary.insert(
            "link_quality".into(),
            serde_json::json!({ "rl_mean": lq.rl_mean(), "uniform_mean": lq.uniform_mean() }),
        );
        files.append(&mut link_quality_csv(&lq, hash, seed)?);
    }

    let mut trace = CsvBuilder::new(
        "training_trace.csv",
        hash,
        seed,
        &["iteration", "scheme", "variant", "global_loss", "probe_accuracy", "straggler_count"],
    )?;
    let mut table = CsvBuilder::new(
        "summary.csv",
        hash,
        seed,
        &["variant", "scheme", "straggler_count", "final_loss", "original_loss", "probe_accuracy"],
    )?;
    for r in &bundle.runs {
        let last = r.run.trace.len().saturating_sub(1);
        for (k, p) in r.run.trace.iter().enumerate() {
            let acc = if k == last { num(r.probe_accuracy) } else { String::new() };
            trace.row([
                p.iteration.to_string(),
                r.scheme.name().to_string(),
                r.variant.name().to_string(),
                num(p.global_loss),
                acc,
                r.straggler_count.to_string(),
            ])?;
        }
        table.row([
            r.variant.name().to_string(),
            r.scheme.name().to_string(),
            r.straggler_count.to_string(),
            num(r.final_loss()),
            num(r.original_loss),
            num(r.probe_accuracy),
        ])?;
    }
    files.push(trace.finish()?);
    files.push(table.finish()?);
    files.push(config_artifact(cfg, hash, seed)?);
    Ok((files, serde_json::Value::Object(summary)))
}

/// The resolved configuration, re-parseable as TOML.
pub fn config_artifact(cfg: &ExperimentConfig, hash: &str, seed: u64) -> Result<Artifact> {
    let mut bytes = header_line(hash, seed).into_bytes();
    bytes.extend_from_slice(cfg.to_toml()?.as_bytes());
    Ok(Artifact {
        name: "config.toml".into(),
        bytes,
    })
}

pub fn sweep_artifact(rows: &[SweepRow], hash: &str, seed: u64) -> Result<Artifact> {
    let mut b = CsvBuilder::new(
        "straggler_sweep.csv",
        hash,
        seed,
        &["variant", "scheme", "straggler_count", "final_loss", "probe_accuracy"],
    )?;
    for r in rows {
        b.row([
            r.variant.name().to_string(),
            r.scheme.name().to_string(),
            r.straggler_count.to_string(),
            num(r.final_loss),
            num(r.probe_accuracy),
        ])?;
    }
    b.finish()
}

pub fn graph_artifacts(
    graph: &Graph,
    trace: &[TraceRow],
    p_fail: &Matrix,
    hash: &str,
    seed: u64,
) -> Result<Vec<Artifact>> {
    Ok(vec![
        graph_csv("graph_proposed.csv", graph, p_fail, hash, seed)?,
        rl_trace_csv(trace, hash, seed)?,
    ])
}

/// Write artifacts and their manifest into `dir`, creating it if needed.
pub fn write_artifacts(
    dir: &Path,
    command: &str,
    hash: &str,
    seed: u64,
    stages: &[&str],
    files: &[Artifact],
    summary: serde_json::Value,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for a in files {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(|e| Error::io(&path, e))?;
    }
    let mut manifest = Manifest::new(command, hash, seed, stages.iter().map(|s| s.to_string()).collect(), files);
    manifest.summary = summary;
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f64; 3]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn heatmap_mean_drops_when_post_is_elementwise_smaller() {
        let pre = m(&[[0.0, 3.0, 2.0], [1.0, 0.0, 4.0], [2.0, 2.0, 0.0]]);
        let post = m(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [0.0, 2.0, 0.0]]);
        let (files, avg) = emit_heatmap_data(&pre, &post, Variant::Proposed, "ab", 1).unwrap();
        assert_eq!(files.len(), 2);
        assert!(avg.post < avg.pre);
        assert!((avg.pre - 14.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn identical_heatmaps_have_equal_averages() {
        let pre = m(&[[0.0, 3.0, 2.0], [1.0, 0.0, 4.0], [2.0, 2.0, 0.0]]);
        let (_, avg) = emit_heatmap_data(&pre, &pre, Variant::Uniform, "ab", 1).unwrap();
        assert_eq!(avg.pre, avg.post);
    }

    #[test]
    fn heatmap_shape_mismatch_is_rejected() {
        let pre = m(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        let post = Matrix::zeros(2, 2);
        assert!(emit_heatmap_data(&pre, &post, Variant::Proposed, "ab", 1).is_err());
    }

    #[test]
    fn every_csv_starts_with_the_header() {
        let pre = m(&[[0.0, 3.0, 2.0], [1.0, 0.0, 4.0], [2.0, 2.0, 0.0]]);
        let (files, _) = emit_heatmap_data(&pre, &pre, Variant::Proposed, "00ff", 9).unwrap();
        for f in files {
            let text = String::from_utf8(f.bytes).unwrap();
            assert!(text.starts_with(&format!("# fedlink {ARTIFACT_VERSION} config_hash=00ff seed=9\n")));
            assert_eq!(text.lines().nth(1).unwrap(), "receiver,0,1,2");
        }
    }

    #[test]
    fn empty_uniform_sample_is_an_error() {
        let g = Graph {
            incoming: vec![Some(1), Some(0)],
        };
        let p = Matrix::filled(2, 2, 0.5);
        assert!(link_quality(&g, &[], &p).is_err());
    }

    #[test]
    fn link_quality_means_are_plain_averages() {
        let p = m(&[[0.0, 0.2, 0.4], [0.1, 0.0, 0.3], [0.6, 0.5, 0.0]]);
        let rl = Graph {
            incoming: vec![Some(1), Some(0), Some(1)],
        };
        let uni = Graph {
            incoming: vec![Some(2), Some(2), Some(0)],
        };
        let lq = link_quality(&rl, &[uni.clone(), uni], &p).unwrap();
        assert!((lq.rl_mean() - (0.2 + 0.1 + 0.5) / 3.0).abs() < 1e-15);
        assert!((lq.uniform_mean() - (0.4 + 0.3 + 0.6) / 3.0).abs() < 1e-15);
        assert_eq!(lq.uniform.len(), 6);
    }
}
