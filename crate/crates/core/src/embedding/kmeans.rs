use rand::Rng;

use super::{project, PcaBasis};
use crate::datastore::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Matrix};
use crate::rng::{self, SimRng};

/// One client's clustering in the shared PCA space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub client_id: usize,
    /// `k x q`; row `n` is the centroid `v_in`.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    pub basis_fingerprint: u64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydStep {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub wcss: f64,
}

/// Index of the nearest centroid (ties go to the lowest index) and its squared distance.
fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Within-cluster sum of squares under nearest-centroid assignment.
pub fn wcss(x: &Matrix, centroids: &Matrix) -> f64 {
    x.iter_rows().map(|p| nearest(p, centroids).1).sum()
}

/// K-means++ seeding: uniform first pick, then D^2-weighted picks. When every
/// remaining point coincides with a chosen centroid the pick falls back to
/// uniform over unchosen points.
pub fn kmeanspp_init(x: &Matrix, k: usize, rng: &mut SimRng) -> Result<Matrix> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::arg(format!("cannot pick {k} centroids from {n} points")));
    }
    let mut chosen = vec![false; n];
    let mut centroids = Matrix::zeros(0, x.cols());
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push_row(x.row(first))?;
    let mut d2: Vec<f64> = x.iter_rows().map(|p| sq_dist(p, x.row(first))).collect();
    d2[first] = 0.0;

    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    last_positive = i;
                    acc += w;
                    if acc > target {
                        pick = Some(i);
                        break;
                    }
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push_row(x.row(pick))?;
        let c = x.row(pick);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = if chosen[i] { 0.0 } else { w.min(sq_dist(x.row(i), c)) };
        }
    }
    Ok(centroids)
}

/// One assign-then-average Lloyd iteration. An empty cluster keeps its
/// previous centroid. The returned WCSS is measured against the updated
/// centroids under the returned assignments.
pub fn lloyd_iterate(x: &Matrix, centroids: &Matrix) -> LloydStep {
    let k = centroids.rows();
    let d = x.cols();
    let assignments: Vec<usize> = x.iter_rows().map(|p| nearest(p, centroids).0).collect();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (p, &a) in x.iter_rows().zip(&assignments) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut updated = centroids.clone();
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (u, s) in updated.row_mut(c).iter_mut().zip(sums.row(c)) {
                *u = s * inv;
            }
        }
    }
    let wcss = x
        .iter_rows()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, updated.row(a)))
        .sum();
    LloydStep {
        centroids: updated,
        assignments,
        wcss,
    }
}

/// Project a client's points into the shared basis, seed with K-means++ and
/// refine with Lloyd until the WCSS improvement drops below `tol` or
/// `max_iters` iterations have run. Writes the assignments back into `ld`.
pub fn cluster_local(
    ld: &mut LocalDataset,
    basis: &PcaBasis,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let x = project(basis, &ld.points)?;
    let mut rng = rng::stream(seed, &[rng::label("kmeans"), ld.client_id as u64]);
    let mut centroids = kmeanspp_init(&x, ld.k, &mut rng)?;
    let mut prev = wcss(&x, &centroids);
    let mut assignments: Vec<usize> = x.iter_rows().map(|p| nearest(p, &centroids).0).collect();
    for _ in 0..max_iters.max(1) {
        let step = lloyd_iterate(&x, &centroids);
        let improvement = prev - step.wcss;
        centroids = step.centroids;
        assignments = step.assignments;
        prev = step.wcss;
        if improvement < tol || improvement <= 0.0 {
            break;
        }
    }
    ld.cluster_assignments = Some(assignments.clone());
    Ok(ClusterModel {
        client_id: ld.client_id,
        centroids,
        assignments,
        wcss: prev,
        basis_fingerprint: basis.fingerprint,
    })
}
