//! Gaussian feature statistics and the Fréchet distance between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::linalg::{matmul, reconstruct, symmetric_eigen};

/// Negative eigenvalues down to this (relative) size are treated as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Row-major `d x d` sample covariance (divided by `count - 1`).
    pub covariance: Vec<f64>,
}

impl FeatureStats {
    /// Two-pass mean and covariance.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let count = features.len();
        if count < 2 {
            return Err(Error::Argument(format!("need at least 2 feature vectors, got {count}")));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Dimension("feature vectors must share a nonzero length".into()));
        }
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, x) in mean.iter_mut().zip(f) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut covariance = vec![0.0; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    covariance[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = covariance[i * d + j] / (count - 1) as f64;
                covariance[i * d + j] = v;
                covariance[j * d + i] = v;
            }
        }
        Ok(FeatureStats {
            count,
            mean,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Covariance is estimated from fewer samples than dimensions + 1.
    pub fn is_low_sample(&self) -> bool {
        self.count < self.dim() + 1
    }
}

fn check_psd(values: &[f64], what: &str) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(&bad) = values.iter().find(|&&l| l < -PSD_TOLERANCE * scale) {
        return Err(Error::Numerical(format!(
            "{what} is not positive semidefinite: eigenvalue {bad:e} (largest magnitude {scale:e})"
        )));
    }
    Ok(())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`. The trace of the
/// square root is taken from the eigenvalues of the symmetric matrix
/// `S_a^(1/2) S_b S_a^(1/2)`, which shares its spectrum with `S_a S_b`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.covariance.len() != d * d || b.covariance.len() != d * d {
        return Err(Error::Dimension(format!("feature dims {} and {}", d, b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace = |m: &[f64]| (0..d).map(|i| m[i * d + i]).sum::<f64>();

    let (va, qa) = symmetric_eigen(&a.covariance, d)?;
    check_psd(&va, "first covariance")?;
    let (vb, _) = symmetric_eigen(&b.covariance, d)?;
    check_psd(&vb, "second covariance")?;
    let sqrt_a = reconstruct(&va, &qa, d, |l| l.max(0.0).sqrt());
    let mut inner = matmul(&matmul(&sqrt_a, &b.covariance, d), &sqrt_a, d);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (vi, _) = symmetric_eigen(&inner, d)?;
    check_psd(&vi, "covariance product")?;
    let tr_sqrt: f64 = vi.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok(mean_term + trace(&a.covariance) + trace(&b.covariance) - 2.0 * tr_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> FeatureStats {
        FeatureStats {
            count: 100,
            mean,
            covariance: cov,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![1.0], vec![1.0]);
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = stats(vec![0.0], vec![4.0]);
        // (2 - 1)^2 for standard deviations 1 and 2.
        assert!((fid(&a, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(fid(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn sample_statistics() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![2.0, 5.0]];
        let s = FeatureStats::from_features(&f).unwrap();
        assert_eq!(s.mean, vec![2.0, 3.0]);
        assert!((s.covariance[0] - 1.0).abs() < 1e-12);
        assert!((s.covariance[3] - 3.0).abs() < 1e-12);
        assert!((s.covariance[1] - 0.0).abs() < 1e-12);
        assert!(!s.is_low_sample());
        assert!(FeatureStats::from_features(&f[..1]).is_err());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(fid(&a, &a), Err(Error::Numerical(_))));
    }
}
