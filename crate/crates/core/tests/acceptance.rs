//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use fedlink_core::autoenc::{Activation, Model};
use fedlink_core::embedding::{fit_shared_pca, kmeanspp_init, lloyd_iterate, local_moments, wcss};
use fedlink_core::exchange::original_rows_unchanged;
use fedlink_core::federation::Scheme;
use fedlink_core::graphrl::{
    discover_graph, policy_probabilities, q_update, DiscoveryConfig, Graph, QState, RewardTable,
};
use fedlink_core::harness::{
    baseline_graph, bundle_artifacts, discover, mean_link_failure, parse_config, prepare, run_pipeline,
    straggler_sweep, ExperimentConfig, MetricsBundle, Variant,
};
use fedlink_core::rng::{label, stream, SimRng};
use fedlink_core::Matrix;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn reference_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    parse_config(&path).expect("reference config parses")
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-300)
}

fn central_difference(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = f(&p);
            p[k] = orig - h;
            let down = f(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_model(rng: &mut SimRng) -> Model {
    let d = rng.random_range(2..7);
    let z = rng.random_range(1..=d);
    let dims = if rng.random_bool(0.5) {
        vec![d, z, d]
    } else {
        let h = rng.random_range(z..=d + 2);
        vec![d, h, z, h, d]
    };
    let act = if rng.random_bool(0.5) { Activation::Sigmoid } else { Activation::Relu };
    let model = Model::init(&dims, act, rng.random()).unwrap();
    let params: Vec<f64> = model.params().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
    model.with_params(&params).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(101, &[label("gradcheck")]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let model = random_model(&mut rng);
        let batch = random_matrix(rng.random_range(1..9), model.input_dim(), &mut rng);
        let b = batch.rows() as f64;

        let (_, analytic) = model.gradient(&batch).unwrap();
        let numeric = central_difference(model.params(), |p| model.with_params(p).unwrap().loss(&batch).unwrap() / b);
        worst = worst.max(rel_err(&analytic, &numeric));

        // Proximal objective: L/|B| + mu/2 |phi - phi_G|^2, read back through one step.
        let mu = rng.random_range(0.01..1.0);
        let eta = 0.1;
        let global: Vec<f64> = model.params().iter().map(|w| w + rng.random_range(-0.5..0.5)).collect();
        let mut stepped = model.clone();
        stepped.prox_sgd_step(&batch, eta, mu, Some(&global)).unwrap();
        let implied: Vec<f64> = model.params().iter().zip(stepped.params()).map(|(a, c)| (a - c) / eta).collect();
        let numeric = central_difference(model.params(), |p| {
            let prox: f64 = p.iter().zip(&global).map(|(a, g)| (a - g) * (a - g)).sum();
            model.with_params(p).unwrap().loss(&batch).unwrap() / b + 0.5 * mu * prox
        });
        worst = worst.max(rel_err(&implied, &numeric));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst < 1e-4 && secs < 30.0,
        detail: format!("worst relative error {worst:.2e} over 200 checks, {secs:.1}s"),
    }
}

fn q_oracle(q: &[f64], client: usize, buffer: &[(usize, f64)]) -> Vec<f64> {
    let mut out = q.to_vec();
    for a in 0..q.len() {
        let rewards: Vec<f64> = buffer.iter().filter(|e| e.0 == a).map(|e| e.1).collect();
        if !rewards.is_empty() {
            let mut sum = 0.0;
            for r in &rewards {
                sum += r;
            }
            out[a] += sum / rewards.len() as f64;
        }
    }
    let min = (0..q.len()).filter(|&j| j != client).map(|j| out[j]).fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        for (j, v) in out.iter_mut().enumerate() {
            if j != client {
                *v += 1e-6 - min;
            }
        }
    }
    out
}

fn q_learning_oracle() -> Outcome {
    let mut rng = stream(202, &[label("q-oracle")]);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(1..=10);
        let client = rng.random_range(0..n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let mut qs = QState::with_q(client, q, m).unwrap();
        let start = qs.q().to_vec();
        let mut buffer = Vec::new();
        for _ in 0..m {
            let mut a = rng.random_range(0..n - 1);
            if a >= client {
                a += 1;
            }
            let r = rng.random_range(-2.0..2.0);
            qs.push(a, r).unwrap();
            buffer.push((a, r));
        }
        let expected = q_oracle(&start, client, &buffer);
        q_update(&mut qs);
        let same = qs
            .q()
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || qs.t() != 1 || !qs.buffer().is_empty() {
            mismatches += 1;
        }
    }

    let mut invalid = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=10);
        let client = rng.random_range(0..n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..5.0)).collect();
        let qs = QState::with_q(client, q, 1).unwrap();
        let gamma = rng.random::<f64>();
        let pi = policy_probabilities(&qs, gamma, &mut rng);
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || pi.iter().any(|&p| !(p >= 0.0)) || pi[client] != 0.0 {
            invalid += 1;
        }
    }
    Outcome {
        pass: mismatches == 0 && invalid == 0,
        detail: format!("{mismatches}/1000 update mismatches, {invalid}/1000 invalid policies"),
    }
}

fn dominant_link_discovery() -> Outcome {
    let start = Instant::now();
    let n = 5;
    let mut rng = stream(303, &[label("dominant")]);
    let target: Vec<usize> = (0..n)
        .map(|i| {
            let mut t = rng.random_range(0..n - 1);
            if t >= i {
                t += 1;
            }
            t
        })
        .collect();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = if j == target[i] { 1.0 } else { rng.random_range(0.0..0.5) };
                m.set(i, j, r);
            }
        }
    }
    let table = RewardTable::from_matrix(m).unwrap();
    let cfg = DiscoveryConfig::new(600, 90);
    let hits = (0..100u64)
        .filter(|&s| {
            let d = discover_graph(&table, &cfg, s).unwrap();
            d.graph.incoming.iter().zip(&target).all(|(a, b)| *a == Some(*b))
        })
        .count();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: hits >= 95 && secs < 60.0,
        detail: format!("{hits}/100 seeds recovered the dominant graph, {secs:.1}s"),
    }
}

fn channel_aware_selection(graphs: &mut Vec<Graph>) -> Outcome {
    let base = reference_config();
    let mut channel_only_ok = 0;
    let (mut rl_mixed, mut uni_mixed) = (0.0, 0.0);
    for seed in 1..=20u64 {
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        let prep = prepare(&cfg).unwrap();
        let uniform = baseline_graph(&cfg, &prep).unwrap();
        let uni = mean_link_failure(&uniform, &prep.p_fail);

        let mut channel_only = cfg.clone();
        channel_only.reward.alpha1 = 0.0;
        let rl = discover(&channel_only, &prep).unwrap();
        if mean_link_failure(&rl.graph, &prep.p_fail) <= uni {
            channel_only_ok += 1;
        }

        let mixed = discover(&cfg, &prep).unwrap();
        rl_mixed += mean_link_failure(&mixed.graph, &prep.p_fail) / 20.0;
        uni_mixed += uni / 20.0;
        graphs.extend([uniform, rl.graph, mixed.graph]);
    }
    Outcome {
        pass: channel_only_ok == 20 && rl_mixed < uni_mixed,
        detail: format!(
            "channel-only RL <= uniform in {channel_only_ok}/20 seeds; mixed reward mean P_D rl {rl_mixed:.4} vs uniform {uni_mixed:.4}"
        ),
    }
}

fn dissimilarity_reduction(bundles: &[MetricsBundle]) -> Outcome {
    let mut ok = 0;
    let mut pairs = Vec::new();
    for b in bundles {
        let pre = b.prepared.lambda_pre.mean_off_diagonal();
        let post = b.exchanges[&Variant::Proposed].lambda_post.mean_off_diagonal();
        if post < pre {
            ok += 1;
        }
        pairs.push(format!("{pre:.2}->{post:.2}"));
    }
    Outcome {
        pass: ok == bundles.len(),
        detail: format!("mean lambda decreased in {ok}/{} seeds ({})", bundles.len(), pairs.join(", ")),
    }
}

fn convergence_ordering(bundles: &[MetricsBundle], secs: f64) -> Outcome {
    let mut pass = secs < 600.0;
    let mut parts = Vec::new();
    for scheme in Scheme::ALL {
        let mut order = 0;
        let mut probe = 0;
        for b in bundles {
            let p = b.run(Variant::Proposed, scheme).unwrap();
            let u = b.run(Variant::Uniform, scheme).unwrap();
            let n = b.run(Variant::NonIid, scheme).unwrap();
            if p.final_loss() < u.final_loss() && u.final_loss() < n.final_loss() {
                order += 1;
            }
            if p.probe_accuracy > n.probe_accuracy {
                probe += 1;
            }
        }
        pass &= order >= 4 && probe >= 4;
        parts.push(format!("{scheme}: loss order {order}/5, probe {probe}/5"));
    }
    Outcome {
        pass,
        detail: format!("{}; {secs:.0}s", parts.join("; ")),
    }
}

fn straggler_robustness(violations: &mut usize) -> Outcome {
    let base = reference_config();
    let counts = [0, 2, 4, 6];
    let mut ok = 0;
    let mut total = 0;
    let mut failures = Vec::new();
    for seed in 1..=3u64 {
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        cfg.variants = vec![Variant::Proposed, Variant::NonIid];
        let rows = straggler_sweep(&cfg, &counts).unwrap();
        for &c in &counts {
            let loss = |v| rows.iter().find(|r| r.variant == v && r.straggler_count == c).unwrap().final_loss;
            total += 1;
            if loss(Variant::Proposed) <= loss(Variant::NonIid) {
                ok += 1;
            } else {
                failures.push(format!("seed {seed} count {c}"));
            }
        }
        let prep = prepare(&cfg).unwrap();
        let d = discover(&cfg, &prep).unwrap();
        let x = fedlink_core::harness::exchange_along(&cfg, &prep, &d.graph).unwrap();
        *violations += x.violations.len();
    }
    Outcome {
        pass: ok == total,
        detail: format!("proposed <= non-iid in {ok}/{total} cells {failures:?}"),
    }
}

fn graph_ok(g: &Graph) -> bool {
    g.validate().is_ok() && g.incoming.iter().enumerate().all(|(i, j)| j.is_some_and(|j| j != i))
}

fn safety_invariants(bundles: &[MetricsBundle], graphs: &[Graph], extra_violations: usize) -> Outcome {
    let mut violations = extra_violations;
    let mut bad_graphs = graphs.iter().filter(|g| !graph_ok(g)).count();
    let mut changed_senders = 0;
    let mut senders = 0;
    for b in bundles {
        for x in b.exchanges.values() {
            violations += x.violations.len();
            if !graph_ok(&x.graph) {
                bad_graphs += 1;
            }
            let mut seen: Vec<usize> = x.report.decisions.iter().filter(|d| d.points_moved > 0).map(|d| d.transmitter).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                senders += 1;
                if !original_rows_unchanged(&b.prepared.clients[t], &x.datasets[t]) {
                    changed_senders += 1;
                }
            }
        }
        if let Some(d) = &b.discovery {
            if !graph_ok(&d.graph) {
                bad_graphs += 1;
            }
        }
    }
    Outcome {
        pass: violations == 0 && bad_graphs == 0 && changed_senders == 0,
        detail: format!(
            "{violations} trust violations, {bad_graphs} malformed graphs of {}, {changed_senders}/{senders} senders modified",
            graphs.len() + bundles.iter().map(|b| b.exchanges.len() + 1).sum::<usize>()
        ),
    }
}

fn determinism(first: &MetricsBundle) -> Outcome {
    let cfg = reference_config();
    let again = run_pipeline(&cfg).unwrap();
    let (a, _) = bundle_artifacts(&cfg, first).unwrap();
    let (b, _) = bundle_artifacts(&cfg, &again).unwrap();
    let same = a == b;
    Outcome {
        pass: same && !a.is_empty(),
        detail: format!("{} metric files, byte-identical: {same}", a.len()),
    }
}

fn numerical_subsystems() -> Outcome {
    let mut rng = stream(1010, &[label("numerics")]);
    let (mut worst_gram, mut worst_cov): (f64, f64) = (0.0, 0.0);
    let mut lloyd_violations = 0;
    for _ in 0..100 {
        let d = rng.random_range(2..10);
        let parts: Vec<Matrix> = (0..rng.random_range(1..5))
            .map(|_| {
                let rows = rng.random_range(3..40);
                random_matrix(rows, d, &mut rng)
            })
            .collect();
        let stats: Vec<_> = parts.iter().map(|p| local_moments(p).unwrap()).collect();
        let q = rng.random_range(1..=d);
        let basis = fit_shared_pca(&stats, q).unwrap();
        for a in 0..q {
            for b in 0..q {
                let g: f64 = basis.components.row(a).iter().zip(basis.components.row(b)).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst_gram = worst_gram.max((g - target).abs());
            }
        }

        let mut pooled = stats[0].clone();
        for s in &stats[1..] {
            pooled.merge(s).unwrap();
        }
        let all = Matrix::vstack(&parts.iter().collect::<Vec<_>>()).unwrap();
        let n = all.rows() as f64;
        let mean: Vec<f64> = (0..d).map(|j| all.iter_rows().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov = pooled.covariance();
        for i in 0..d {
            for j in 0..d {
                let direct = all.iter_rows().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n;
                worst_cov = worst_cov.max((cov[i * d + j] - direct).abs());
            }
        }

        let k = rng.random_range(1..=all.rows().min(6));
        let mut centroids = kmeanspp_init(&all, k, &mut rng).unwrap();
        let mut prev = wcss(&all, &centroids);
        for _ in 0..30 {
            let step = lloyd_iterate(&all, &centroids);
            if step.wcss > prev * (1.0 + 1e-12) + 1e-12 {
                lloyd_violations += 1;
            }
            prev = step.wcss;
            centroids = step.centroids;
        }
    }
    Outcome {
        pass: worst_gram <= 1e-8 && worst_cov <= 1e-8 && lloyd_violations == 0,
        detail: format!(
            "gram deviation {worst_gram:.1e}, pooled covariance deviation {worst_cov:.1e}, {lloyd_violations} WCSS increases"
        ),
    }
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id, name, o: Outcome| {
        println!("criterion {id:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    report(1, "gradient correctness", gradient_correctness());
    report(2, "q-learning oracle", q_learning_oracle());
    report(3, "dominant-link discovery", dominant_link_discovery());

    let mut graphs = Vec::new();
    report(4, "channel-aware selection", channel_aware_selection(&mut graphs));

    let start = Instant::now();
    let base = reference_config();
    let bundles: Vec<MetricsBundle> = (1..=5u64)
        .map(|seed| {
            let mut cfg = base.clone();
            cfg.master_seed = seed;
            run_pipeline(&cfg).unwrap()
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    report(5, "dissimilarity reduction", dissimilarity_reduction(&bundles));
    report(6, "convergence ordering", convergence_ordering(&bundles, secs));

    let mut violations = 0;
    report(7, "straggler robustness", straggler_robustness(&mut violations));
    report(8, "safety invariants", safety_invariants(&bundles, &graphs, violations));
    report(9, "determinism", determinism(&bundles[0]));
    report(10, "numerical subsystems", numerical_subsystems());

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
