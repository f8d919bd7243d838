use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "ProbeConfig::default_iters")]
    pub iters: usize,
    #[serde(default = "ProbeConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "ProbeConfig::default_batch")]
    pub batch: usize,
}

impl ProbeConfig {
    fn default_iters() -> usize {
        500
    }
    fn default_lr() -> f64 {
        0.5
    }
    fn default_batch() -> usize {
        64
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iters: Self::default_iters(),
            lr: Self::default_lr(),
            batch: Self::default_batch(),
        }
    }
}

/// Linear softmax classifier over standardized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `[n_classes x z]`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ProbeHead {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn standardize(&self, row: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (row[k] - self.mean[k]) / self.scale[k];
        }
    }

    fn logits(&self, features: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.bias[c] + self.weights.row(c).iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
        }
    }

    pub fn predict(&self, embeddings: &Matrix) -> Result<Vec<usize>> {
        if embeddings.cols() != self.mean.len() {
            return Err(Error::arg(format!(
                "embeddings have {} columns, probe expects {}",
                embeddings.cols(),
                self.mean.len()
            )));
        }
        let mut feat = vec![0.0; self.mean.len()];
        let mut logits = vec![0.0; self.n_classes()];
        Ok(embeddings
            .iter_rows()
            .map(|row| {
                self.standardize(row, &mut feat);
                self.logits(&feat, &mut logits);
                argmax(&logits)
            })
            .collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

fn check_labels(embeddings: &Matrix, labels: &[usize], n_classes: usize) -> Result<()> {
    if embeddings.rows() != labels.len() {
        return Err(Error::arg(format!(
            "{} embeddings but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::arg(format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(())
}

/// Minibatch softmax cross-entropy SGD on the head only.
pub fn probe_train(
    embeddings: &Matrix,
    labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeHead> {
    check_labels(embeddings, labels, n_classes)?;
    if embeddings.is_empty() || n_classes == 0 {
        return Err(Error::arg("probe needs at least one example and one class"));
    }
    let (n, z) = (embeddings.rows(), embeddings.cols());
    let mut mean = vec![0.0; z];
    for row in embeddings.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; z];
    for row in embeddings.iter_rows() {
        for k in 0..z {
            scale[k] += (row[k] - mean[k]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = scale.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let mut head = ProbeHead {
        mean,
        scale,
        weights: Matrix::zeros(n_classes, z),
        bias: vec![0.0; n_classes],
    };

    let mut rng = rng::stream(seed, &[rng::label("probe")]);
    let batch = cfg.batch.clamp(1, n);
    let mut feat = vec![0.0; z];
    let mut probs = vec![0.0; n_classes];
    for _ in 0..cfg.iters {
        let mut gw = Matrix::zeros(n_classes, z);
        let mut gb = vec![0.0; n_classes];
        for _ in 0..batch {
            let r = rng.random_range(0..n);
            head.standardize(embeddings.row(r), &mut feat);
            head.logits(&feat, &mut probs);
            softmax_in_place(&mut probs);
            probs[labels[r]] -= 1.0;
            for c in 0..n_classes {
                gb[c] += probs[c];
                for (g, f) in gw.row_mut(c).iter_mut().zip(&feat) {
                    *g += probs[c] * f;
                }
            }
        }
        let step = cfg.lr / batch as f64;
        for c in 0..n_classes {
            head.bias[c] -= step * gb[c];
            for (w, g) in head.weights.row_mut(c).iter_mut().zip(gw.row(c)) {
                *w -= step * g;
            }
        }
    }
    Ok(head)
}

/// Top-1 accuracy.
pub fn probe_eval(head: &ProbeHead, embeddings: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(embeddings, labels, head.n_classes())?;
    if labels.is_empty() {
        return Err(Error::arg("probe evaluation needs at least one example"));
    }
    let pred = head.predict(embeddings)?;
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = rng::stream(seed, &[]);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            if (x - y).abs() < 0.05 {
                continue;
            }
            rows.push([x, y]);
            labels.push(usize::from(x > y));
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_two_class() {
        let (x, y) = separable(400, 1);
        let head = probe_train(&x, &y, 2, &ProbeConfig::default(), 0).unwrap();
        assert!(probe_eval(&head, &x, &y).unwrap() >= 0.99);
    }

    #[test]
    fn random_labels_are_at_chance() {
        let mut rng = rng::stream(7, &[]);
        let mut draw = |n: usize| {
            let x = Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.random()).collect()).unwrap();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            (x, y)
        };
        let (xt, yt) = draw(2000);
        let (xe, ye) = draw(2000);
        let head = probe_train(&xt, &yt, 10, &ProbeConfig::default(), 1).unwrap();
        let acc = probe_eval(&head, &xe, &ye).unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn seeded_and_validated() {
        let (x, y) = separable(50, 2);
        let cfg = ProbeConfig {
            iters: 20,
            ..ProbeConfig::default()
        };
        assert_eq!(
            probe_train(&x, &y, 2, &cfg, 3).unwrap(),
            probe_train(&x, &y, 2, &cfg, 3).unwrap()
        );
        assert!(probe_train(&x, &y, 1, &cfg, 3).is_err());
        assert!(probe_train(&x, &y[1..], 2, &cfg, 3).is_err());
    }
}
