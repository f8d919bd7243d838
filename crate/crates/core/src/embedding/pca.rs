use nalgebra::{DMatrix, SymmetricEigen};

use super::MomentStats;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `q x d`, orthonormal rows.
    pub components: Matrix,
    /// Non-increasing.
    pub explained_variance: Vec<f64>,
    /// Total variance (trace of the covariance) of the fitted data.
    pub total_variance: f64,
    /// Content hash; two cluster models are comparable only if their bases
    /// share a fingerprint.
    pub fingerprint: u64,
}

impl PcaBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }
}

fn fingerprint(mean: &[f64], components: &Matrix) -> u64 {
    mean.iter()
        .chain(components.as_slice())
        .fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
}

/// Pool client moments and return the top-`q` principal axes.
///
/// Each component is sign-normalized so its largest-magnitude entry is
/// positive, making the basis deterministic.
pub fn fit_shared_pca(stats: &[MomentStats], q: usize) -> Result<PcaBasis> {
    let first = stats.first().ok_or_else(|| Error::arg("no moment statistics to pool"))?;
    let mut pooled = first.clone();
    for s in &stats[1..] {
        pooled.merge(s)?;
    }
    let d = pooled.dim();
    if q == 0 || q > d {
        return Err(Error::arg(format!("n_components {q} must be in [1, {d}]")));
    }
    if pooled.count <= q {
        return Err(Error::arg(format!(
            "need more than {q} points for {q} components, have {}",
            pooled.count
        )));
    }
    let cov = pooled.covariance();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let mut m = DMatrix::from_row_slice(d, d, &cov);
    // symmetrize against rounding in the moment sums
    m = (&m + m.transpose()) * 0.5;
    let total_variance = m.trace();
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Matrix::zeros(q, d);
    let mut explained_variance = Vec::with_capacity(q);
    for (r, &c) in order.iter().take(q).enumerate() {
        let col = eig.eigenvectors.column(c);
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            components.set(r, k, sign * col[k]);
        }
        explained_variance.push(eig.eigenvalues[c]);
    }
    let mean: Vec<f64> = pooled.sum.iter().map(|s| s / pooled.count as f64).collect();
    let fingerprint = fingerprint(&mean, &components);
    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
        total_variance,
        fingerprint,
    })
}

/// `(x - mean) * components^T` for every row.
pub fn project(basis: &PcaBasis, points: &Matrix) -> Result<Matrix> {
    if points.cols() != basis.dim() {
        return Err(Error::arg(format!(
            "point dimension {} does not match basis dimension {}",
            points.cols(),
            basis.dim()
        )));
    }
    let q = basis.n_components();
    let mut out = Matrix::zeros(points.rows(), q);
    let mut centered = vec![0.0; basis.dim()];
    for (i, x) in points.iter_rows().enumerate() {
        for (c, (xv, mv)) in centered.iter_mut().zip(x.iter().zip(&basis.mean)) {
            *c = xv - mv;
        }
        for r in 0..q {
            out.set(i, r, dot(&centered, basis.components.row(r)));
        }
    }
    Ok(out)
}

/// Map projected coordinates back to the input space.
pub fn reconstruct(basis: &PcaBasis, projected: &Matrix) -> Result<Matrix> {
    if projected.cols() != basis.n_components() {
        return Err(Error::arg("projected dimension does not match basis"));
    }
    let d = basis.dim();
    let mut out = Matrix::zeros(projected.rows(), d);
    for (i, z) in projected.iter_rows().enumerate() {
        let row = out.row_mut(i);
        row.copy_from_slice(&basis.mean);
        for (r, &zr) in z.iter().enumerate() {
            for (o, c) in row.iter_mut().zip(basis.components.row(r)) {
                *o += zr * c;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::local_moments;
    use crate::linalg::dist;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_points(seed: u64, n: usize, d: usize) -> Matrix {
        let mut rng = crate::rng::stream(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn line_data_is_rank_one() {
        let dir = [1.0, 2.0, -0.5];
        let rows: Vec<Vec<f64>> = (0..20).map(|t| dir.iter().map(|v| v * t as f64 * 0.1 + 0.3).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let b = fit_shared_pca(&[local_moments(&x).unwrap()], 1).unwrap();
        assert!(b.explained_variance[0] / b.total_variance >= 0.99999);
    }

    #[test]
    fn full_rank_projection_is_isometric() {
        let x = random_points(1, 30, 5);
        let b = fit_shared_pca(&[local_moments(&x).unwrap()], 5).unwrap();
        let z = project(&b, &x).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                assert!((dist(x.row(i), x.row(j)) - dist(z.row(i), z.row(j))).abs() < 1e-6);
            }
        }
        let back = reconstruct(&b, &z).unwrap();
        for (a, c) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let x = random_points(2, 50, 6);
        let b = fit_shared_pca(&[local_moments(&x).unwrap()], 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let g = dot(b.components.row(i), b.components.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8);
            }
            let row = b.components.row(i);
            let pivot = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        assert!(b.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let x = random_points(3, 10, 3);
        let b = fit_shared_pca(&[local_moments(&x).unwrap()], 2).unwrap();
        let z = project(&b, &Matrix::from_rows(&[b.mean.clone()]).unwrap()).unwrap();
        assert!(z.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn projection_matches_hand_dot_products() {
        let x = random_points(4, 12, 3);
        let b = fit_shared_pca(&[local_moments(&x).unwrap()], 2).unwrap();
        let p = [0.4, -1.2, 2.0];
        let z = project(&b, &Matrix::from_rows(&[p]).unwrap()).unwrap();
        for r in 0..2 {
            let c = b.components.row(r);
            let want = (p[0] - b.mean[0]) * c[0] + (p[1] - b.mean[1]) * c[1] + (p[2] - b.mean[2]) * c[2];
            assert!((z.get(0, r) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn argument_checks() {
        let x = random_points(5, 3, 4);
        let m = local_moments(&x).unwrap();
        assert!(fit_shared_pca(&[m.clone()], 0).is_err());
        assert!(fit_shared_pca(&[m.clone()], 5).is_err());
        assert!(fit_shared_pca(&[m.clone()], 3).is_err());
        let b = fit_shared_pca(&[m], 2).unwrap();
        assert!(project(&b, &Matrix::zeros(1, 3)).is_err());
    }
}
