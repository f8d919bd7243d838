//! Federated training loop: local minibatch SGD, periodic aggregation under
//! FedAvg, FedSGD or FedProx, straggler exclusion and global broadcast.

use std::collections::BTreeSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoenc::Model;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    FedAvg,
    FedSgd,
    FedProx,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::FedAvg, Scheme::FedSgd, Scheme::FedProx];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::FedAvg => "fedavg",
            Scheme::FedSgd => "fedsgd",
            Scheme::FedProx => "fedprox",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub scheme: Scheme,
    pub total_iters: usize,
    /// Local iterations between aggregations. Under FedSGD the server
    /// aggregates gradients every iteration and this only sets the logging
    /// interval.
    pub tau_a: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Proximal weight, used by FedProx only.
    pub mu: f64,
    pub straggler_count: usize,
}

impl FlConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.tau_a == 0 || self.total_iters == 0 || self.batch_size == 0 {
            return Err(Error::arg("tau_a, total_iters and batch_size must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.mu >= 0.0) {
            return Err(Error::arg("lr must be positive and mu nonnegative"));
        }
        if self.straggler_count >= n_clients {
            return Err(Error::arg(format!(
                "{} stragglers leave no participant among {n_clients} clients",
                self.straggler_count
            )));
        }
        Ok(())
    }

    fn prox_mu(&self) -> f64 {
        if self.scheme == Scheme::FedProx {
            self.mu
        } else {
            0.0
        }
    }
}

/// Row indices of one minibatch: `min(batch, n)` rows without replacement.
pub fn sample_batch(n: usize, batch: usize, rng: &mut SimRng) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    index::sample(rng, n, batch).into_vec()
}

/// `iters` minibatch steps; under FedProx each step adds `mu (phi - global)`.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    model: &mut Model,
    data: &Matrix,
    iters: usize,
    batch: usize,
    eta: f64,
    mu: f64,
    global: &[f64],
    rng: &mut SimRng,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::arg("local training on an empty dataset"));
    }
    for _ in 0..iters {
        let rows = sample_batch(data.rows(), batch, rng);
        let b = data.select_rows(&rows);
        model.prox_sgd_step(&b, eta, mu, Some(global))?;
    }
    Ok(())
}

fn check_weights(n: usize, weights: &[f64]) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("aggregation needs at least one participant"));
    }
    if weights.len() != n {
        return Err(Error::arg(format!("{} weights for {n} participants", weights.len())));
    }
    let mut sorted = weights.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::arg("aggregation weights must be nonnegative with a positive sum"));
    }
    Ok(total)
}

fn weighted_mean(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let total = check_weights(vectors.len(), weights)?;
    let p = vectors[0].len();
    if vectors.iter().any(|v| v.len() != p) {
        return Err(Error::arg("parameter vectors differ in length"));
    }
    // Terms are summed in sorted order so the result does not depend on the
    // order in which participants are listed.
    let shares: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut terms = vec![0.0; vectors.len()];
    let out = (0..p)
        .map(|k| {
            for (t, (v, s)) in terms.iter_mut().zip(vectors.iter().zip(&shares)) {
                *t = s * v[k];
            }
            terms.sort_unstable_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect();
    Ok(out)
}

/// Weighted average of parameter vectors.
pub fn aggregate_fedavg(params: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    weighted_mean(params, weights)
}

/// `global - eta * weighted_mean(grads)`.
pub fn aggregate_fedsgd(global: &[f64], grads: &[&[f64]], weights: &[f64], eta: f64) -> Result<Vec<f64>> {
    let g = weighted_mean(grads, weights)?;
    if g.len() != global.len() {
        return Err(Error::arg("gradient and global model differ in length"));
    }
    Ok(global.iter().zip(&g).map(|(p, d)| p - eta * d).collect())
}

/// Uniform sample of `count` client indices.
pub fn select_stragglers(n: usize, count: usize, seed: u64) -> Result<BTreeSet<usize>> {
    if count >= n {
        return Err(Error::arg(format!("{count} stragglers out of {n} clients")));
    }
    let mut rng = rng::stream(seed, &[rng::label("stragglers")]);
    Ok(index::sample(&mut rng, n, count).into_iter().collect())
}

/// `sum_i L(phi, D_i) / sum_i |D_i|` over every client.
pub fn global_loss(model: &Model, datasets: &[Matrix]) -> Result<f64> {
    let losses = datasets
        .par_iter()
        .map(|d| model.loss(d))
        .collect::<Result<Vec<_>>>()?;
    let points: usize = datasets.iter().map(Matrix::rows).sum();
    if points == 0 {
        return Err(Error::arg("global loss over no data"));
    }
    Ok(losses.iter().sum::<f64>() / points as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub global_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FlRun {
    pub trace: Vec<TracePoint>,
    pub global: Model,
    pub stragglers: BTreeSet<usize>,
}

impl FlRun {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.global_loss)
    }
}

/// Independent per-client streams for a run.
pub fn client_streams(seed: u64, n: usize) -> Vec<SimRng> {
    (0..n)
        .map(|i| rng::stream(seed, &[rng::label("local-sgd"), i as u64]))
        .collect()
}

/// Train from `init` with stragglers drawn from `seed`.
pub fn run_fl(cfg: &FlConfig, datasets: &[Matrix], init: &Model, seed: u64) -> Result<FlRun> {
    cfg.validate(datasets.len())?;
    let stragglers = select_stragglers(datasets.len(), cfg.straggler_count, seed)?;
    run_fl_with_streams(cfg, datasets, init, client_streams(seed, datasets.len()), stragglers)
}

/// As [`run_fl`] with caller-supplied client RNG streams and straggler set.
pub fn run_fl_with_streams(
    cfg: &FlConfig,
    datasets: &[Matrix],
    init: &Model,
    mut streams: Vec<SimRng>,
    stragglers: BTreeSet<usize>,
) -> Result<FlRun> {
    let n = datasets.len();
    cfg.validate(n)?;
    if streams.len() != n {
        return Err(Error::arg("one RNG stream per client is required"));
    }
    if stragglers.len() >= n || stragglers.iter().any(|&s| s >= n) {
        return Err(Error::arg("straggler set must name existing clients and leave a participant"));
    }
    if let Some(i) = datasets.iter().position(Matrix::is_empty) {
        return Err(Error::arg(format!("client {i} has no data")));
    }
    let participants: Vec<usize> = (0..n).filter(|i| !stragglers.contains(i)).collect();
    let weights: Vec<f64> = participants.iter().map(|&i| datasets[i].rows() as f64).collect();
    let mut global = init.clone();
    let mut trace = Vec::with_capacity(cfg.total_iters.div_ceil(cfg.tau_a));

    match cfg.scheme {
        Scheme::FedAvg | Scheme::FedProx => {
            let mu = cfg.prox_mu();
            let mut done = 0;
            while done < cfg.total_iters {
                let iters = cfg.tau_a.min(cfg.total_iters - done);
                let g = global.params().to_vec();
                let locals = streams
                    .par_iter_mut()
                    .zip(datasets.par_iter())
                    .map(|(rng, data)| {
                        let mut m = global.clone();
                        local_train(&mut m, data, iters, cfg.batch_size, cfg.lr, mu, &g, rng)?;
                        Ok(m)
                    })
                    .collect::<Result<Vec<Model>>>()?;
                let params: Vec<&[f64]> = participants.iter().map(|&i| locals[i].params()).collect();
                global.set_params(&aggregate_fedavg(&params, &weights)?)?;
                done += iters;
                trace.push(TracePoint {
                    iteration: done,
                    global_loss: global_loss(&global, datasets)?,
                });
            }
        }
        Scheme::FedSgd => {
            for it in 1..=cfg.total_iters {
                let batches: Vec<(usize, Vec<usize>)> = participants
                    .iter()
                    .map(|&i| (i, sample_batch(datasets[i].rows(), cfg.batch_size, &mut streams[i])))
                    .collect();
                let grads = batches
                    .par_iter()
                    .map(|(i, rows)| global.gradient(&datasets[*i].select_rows(rows)).map(|(_, g)| g))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
                let next = aggregate_fedsgd(global.params(), &refs, &weights, cfg.lr)?;
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("global model diverged at iteration {it}")));
                }
                global.set_params(&next)?;
                if it % cfg.tau_a == 0 || it == cfg.total_iters {
                    trace.push(TracePoint {
                        iteration: it,
                        global_loss: global_loss(&global, datasets)?,
                    });
                }
            }
        }
    }
    Ok(FlRun {
        trace,
        global,
        stragglers,
    })
}
