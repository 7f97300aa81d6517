//! Embedding clustering quality: silhouette score and a 2-D t-SNE layout.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_labels(n: usize, labels: &[u32]) -> Result<BTreeMap<u32, usize>> {
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} embeddings but {} labels", labels.len())));
    }
    let mut sizes = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_insert(0usize) += 1;
    }
    if sizes.len() < 2 {
        return Err(Error::DegenerateLabel("need at least two distinct labels".into()));
    }
    if let Some((l, _)) = sizes.iter().find(|(_, &c)| c < 2) {
        return Err(Error::DegenerateLabel(format!("label {l} has a single member")));
    }
    Ok(sizes)
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(embeddings: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    let sizes = check_labels(embeddings.len(), labels)?;
    let n = embeddings.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
        for j in 0..n {
            if j != i {
                *sums.entry(labels[j]).or_insert(0.0) += dist(&embeddings[i], &embeddings[j]);
            }
        }
        let own = labels[i];
        let a = sums.get(&own).copied().unwrap_or(0.0) / (sizes[&own] - 1) as f64;
        let b = sums
            .iter()
            .filter(|(l, _)| **l != own)
            .map(|(l, s)| s / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub label: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 15.0,
            iterations: 500,
            learning_rate: 100.0,
            seed: 0,
        }
    }
}

/// Conditional probabilities for row `i` at the bandwidth matching the
/// target perplexity (binary search on the precision).
fn row_affinities(d2: &[f64], i: usize, n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
    let mut p = vec![0.0; n];
    for _ in 0..64 {
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-beta * d2[i * n + j]).exp() };
            sum += p[j];
        }
        if sum <= 0.0 {
            sum = f64::MIN_POSITIVE;
        }
        let mut h = 0.0;
        for pj in p.iter_mut().take(n) {
            *pj /= sum;
            if *pj > 0.0 {
                h -= *pj * pj.ln();
            }
        }
        if (h - target).abs() < 1e-5 {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    p
}

/// Exact O(N^2) t-SNE to two dimensions, deterministic given the seed.
pub fn tsne_2d(embeddings: &[Vec<f64>], opts: TsneOptions) -> Vec<[f64; 2]> {
    let n = embeddings.len();
    if n < 2 {
        return vec![[0.0, 0.0]; n];
    }
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = dist(&embeddings[i], &embeddings[j]);
            d2[i * n + j] = d * d;
        }
    }
    // Normalize distances so the bandwidth search starts in range.
    let mean = d2.iter().sum::<f64>() / (n * n) as f64;
    if mean > 0.0 {
        d2.iter_mut().for_each(|v| *v /= mean);
    }
    let perplexity = opts.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = row_affinities(&d2, i, n, perplexity);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = Tensor::<f64>::randn(&[n, 2], 1e-2, &mut rng);
    let mut y: Vec<[f64; 2]> = init.data().chunks(2).map(|c| [c[0], c[1]]).collect();
    let mut vel = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut q = vec![0.0; n * n];
    for it in 0..opts.iterations {
        let exaggeration = if it < opts.iterations / 4 { 4.0 } else { 1.0 };
        let momentum = if it < opts.iterations / 4 { 0.5 } else { 0.8 };
        let mut qsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    let v = 1.0 / (1.0 + dx * dx + dy * dy);
                    q[i * n + j] = v;
                    qsum += v;
                }
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q[i * n + j];
                let coef = 4.0 * (exaggeration * sym[i * n + j] - w / qsum) * w;
                grad[0] += coef * (y[i][0] - y[j][0]);
                grad[1] += coef * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let same_sign = (grad[k] > 0.0) == (vel[i][k] > 0.0);
                gains[i][k] = if same_sign { (gains[i][k] * 0.8f64).max(0.01) } else { gains[i][k] + 0.2 };
                vel[i][k] = momentum * vel[i][k] - opts.learning_rate * gains[i][k] * grad[k];
            }
        }
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
        }
        let cx = y.iter().map(|p| p[0]).sum::<f64>() / n as f64;
        let cy = y.iter().map(|p| p[1]).sum::<f64>() / n as f64;
        for p in &mut y {
            p[0] -= cx;
            p[1] -= cy;
        }
    }
    y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub silhouette: f64,
    pub projection: Vec<ProjectedPoint>,
}

/// Silhouette in the original space plus a 2-D layout for plotting.
pub fn clustering_quality(embeddings: &[Vec<f64>], labels: &[u32], tsne: TsneOptions) -> Result<ClusteringResult> {
    let silhouette = silhouette(embeddings, labels)?;
    let projection = tsne_2d(embeddings, tsne)
        .into_iter()
        .zip(labels)
        .map(|(p, &label)| ProjectedPoint { label, x: p[0], y: p[1] })
        .collect();
    Ok(ClusteringResult { silhouette, projection })
}

/// `label x y` lines for external plotting.
pub fn projection_to_text(points: &[ProjectedPoint]) -> String {
    points.iter().map(|p| format!("{} {:.6} {:.6}\n", p.label, p.x, p.y)).collect()
}
