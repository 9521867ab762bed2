use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Affine map `x -> (x - mean) * transform` with `transform` of shape `raw_dim x target_dim`.
#[derive(Clone, Debug)]
pub struct Whitening {
    pub mean: Vec<f64>,
    pub transform: DMatrix<f64>,
}

impl Whitening {
    /// Fit on row-major `n x raw_dim` vectors.
    pub fn fit(raw: &[f64], raw_dim: usize, target_dim: usize) -> Result<Self> {
        if raw_dim == 0 || !raw.len().is_multiple_of(raw_dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of length {raw_dim}",
                raw.len()
            )));
        }
        let n = raw.len() / raw_dim;
        if n < 2 {
            return Err(Error::Dataset(format!(
                "whitening needs at least 2 vectors, got {n}"
            )));
        }
        if target_dim == 0 || target_dim > raw_dim {
            return Err(Error::Config(format!(
                "target dimension {target_dim} must be in 1..={raw_dim}"
            )));
        }
        let x = DMatrix::from_row_slice(n, raw_dim, raw);
        let mean: DVector<f64> = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (centered.transpose() * &centered) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..raw_dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = top * 1e-10 + f64::MIN_POSITIVE;
        let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
        if rank < target_dim {
            return Err(Error::RankDeficient {
                achievable: rank,
                requested: target_dim,
            });
        }
        let mut transform = DMatrix::zeros(raw_dim, target_dim);
        for (col, &i) in order.iter().take(target_dim).enumerate() {
            let scale = 1.0 / eig.eigenvalues[i].sqrt();
            transform.set_column(col, &(eig.eigenvectors.column(i) * scale));
        }
        Ok(Self {
            mean: mean.iter().copied().collect(),
            transform,
        })
    }

    pub fn target_dim(&self) -> usize {
        self.transform.ncols()
    }

    /// Apply to row-major vectors of the fitted raw dimension.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let raw_dim = self.mean.len();
        let n = raw.len() / raw_dim;
        let mut x = DMatrix::from_row_slice(n, raw_dim, raw);
        let mean = DVector::from_column_slice(&self.mean).transpose();
        for mut row in x.row_iter_mut() {
            row -= &mean;
        }
        let out = x * &self.transform;
        let mut flat = Vec::with_capacity(n * self.target_dim());
        for row in out.row_iter() {
            flat.extend(row.iter());
        }
        flat
    }
}

/// Fit and apply in one go: zero-mean, identity-covariance output of `target_dim` columns.
pub fn whiten_vectors(raw: &[f64], raw_dim: usize, target_dim: usize) -> Result<Vec<f64>> {
    Ok(Whitening::fit(raw, raw_dim, target_dim)?.apply(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn moments(x: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
        let n = x.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in x.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; dim * dim];
        for row in x.chunks(dim) {
            for a in 0..dim {
                for b in 0..dim {
                    cov[a * dim + b] += (row[a] - mean[a]) * (row[b] - mean[b]) / n as f64;
                }
            }
        }
        (mean, cov)
    }

    fn max_dev_from_identity(cov: &[f64], dim: usize) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..dim {
            for b in 0..dim {
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((cov[a * dim + b] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn correlated_gaussian_becomes_white() {
        let dim = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mix: Vec<f64> = (0..dim * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut raw = Vec::new();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for a in 0..dim {
                let v: f64 = (0..dim).map(|b| mix[a * dim + b] * z[b]).sum();
                raw.push(v + 3.0 * a as f64);
            }
        }
        let out = whiten_vectors(&raw, dim, dim).unwrap();
        let (mean, cov) = moments(&out, dim);
        assert!(mean.iter().all(|m| m.abs() < 1e-10), "{mean:?}");
        assert!(max_dev_from_identity(&cov, dim) < 1e-6);
    }

    #[test]
    fn reduced_dimension_is_white() {
        let dim = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<f64> = (0..dim * 500)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let out = whiten_vectors(&raw, dim, 3).unwrap();
        assert_eq!(out.len(), 500 * 3);
        let (mean, cov) = moments(&out, 3);
        assert!(mean.iter().all(|m| m.abs() < 1e-10));
        assert!(max_dev_from_identity(&cov, 3) < 1e-6);
    }

    #[test]
    fn already_white_input_stays_white() {
        // ±1 on each axis: zero mean, identity covariance
        let dim = 3;
        let mut raw = Vec::new();
        for a in 0..dim {
            for s in [1.0, -1.0] {
                let mut v = vec![0.0; dim];
                v[a] = s * (dim as f64).sqrt();
                raw.extend(v);
            }
        }
        let (_, cov_in) = moments(&raw, dim);
        assert!(max_dev_from_identity(&cov_in, dim) < 1e-12);
        let out = whiten_vectors(&raw, dim, dim).unwrap();
        let (_, cov) = moments(&out, dim);
        assert!(max_dev_from_identity(&cov, dim) < 1e-8);
    }

    #[test]
    fn rank_deficiency_reported() {
        // all points on a line in 3-D
        let raw: Vec<f64> = (0..10)
            .flat_map(|i| [i as f64, 2.0 * i as f64, 0.0])
            .collect();
        match whiten_vectors(&raw, 3, 2) {
            Err(Error::RankDeficient {
                achievable,
                requested,
            }) => {
                assert_eq!(achievable, 1);
                assert_eq!(requested, 2);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_vectors() {
        assert!(whiten_vectors(&[1.0, 2.0], 2, 1).is_err());
    }
}
