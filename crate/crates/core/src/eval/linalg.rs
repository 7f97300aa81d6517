//! Dense symmetric eigendecomposition (cyclic Jacobi) on row-major `f64`
//! matrices.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues and column eigenvectors (`vectors[r * d + k]` is row `r` of
/// eigenvector `k`) of a symmetric `d x d` matrix.
pub fn symmetric_eigen(mat: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if mat.len() != d * d {
        return Err(Error::Dimension(format!("{} entries for a {d}x{d} matrix", mat.len())));
    }
    let mut a = mat.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..d).map(|i| a[i * d + i]).collect(), v))
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// `V diag(f(lambda)) V^T`.
pub fn reconstruct(values: &[f64], vectors: &[f64], d: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let fv: Vec<f64> = values.iter().map(|&l| f(l)).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| vectors[i * d + k] * fv[k] * vectors[j * d + k]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reconstructs_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for d in [1, 2, 5, 9] {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    m[i * d + j] = x;
                    m[j * d + i] = x;
                }
            }
            let (vals, vecs) = symmetric_eigen(&m, d).unwrap();
            let back = reconstruct(&vals, &vecs, d, |l| l);
            for (x, y) in back.iter().zip(&m) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_input() {
        let (vals, _) = symmetric_eigen(&[3.0, 0.0, 0.0, -2.0], 2).unwrap();
        assert_eq!(vals, vec![3.0, -2.0]);
        assert!(symmetric_eigen(&[1.0, 2.0], 2).is_err());
    }
}
