use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Sufficient statistics for a covariance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats {
    pub count: usize,
    pub sum: Vec<f64>,
    /// Row-major `d x d` matrix of `sum x x^T`.
    pub sum_outer: Vec<f64>,
}

impl MomentStats {
    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn merge(&mut self, other: &MomentStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::arg(format!(
                "cannot pool moments of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_outer.iter_mut().zip(&other.sum_outer) {
            *a += b;
        }
        Ok(())
    }

    /// Population covariance `sum_outer / n - mu mu^T` (row-major).
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] = self.sum_outer[i * d + j] / n - mean[i] * mean[j];
            }
        }
        cov
    }
}

pub fn local_moments(points: &Matrix) -> Result<MomentStats> {
    if points.is_empty() {
        return Err(Error::arg("moments of an empty point set"));
    }
    let d = points.cols();
    let mut sum = vec![0.0; d];
    let mut sum_outer = vec![0.0; d * d];
    for x in points.iter_rows() {
        for i in 0..d {
            sum[i] += x[i];
            let xi = x[i];
            // upper triangle only, mirrored below
            for j in i..d {
                sum_outer[i * d + j] += xi * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            sum_outer[i * d + j] = sum_outer[j * d + i];
        }
    }
    Ok(MomentStats {
        count: points.rows(),
        sum,
        sum_outer,
    })
}
