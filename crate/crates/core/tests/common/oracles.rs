//! Independent reference implementations used by the tests.

use nalgebra::{DMatrix, DVector};
use objcomp::data::CompositeExample;
use objcomp::diffusion::*;
use objcomp::encoder::Encoder;
use objcomp::eval::FeatureStats;
use objcomp::graph::ParamKey;
use objcomp::params::ParamStore;
use objcomp::{ImageBuffer, MaskBuffer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{tiny_denoiser, tiny_encoder};
use objcomp::data::ViewPairExample;

pub const N: usize = 8;

/// Linear betas and their running product, computed from scratch.
pub fn oracle_alpha_bar(t: usize, timesteps: usize) -> f64 {
    let mut ab = 1.0;
    for s in 0..=t {
        let beta = 1e-4 + (0.02 - 1e-4) * s as f64 / (timesteps - 1) as f64;
        ab *= 1.0 - beta;
    }
    ab
}

pub struct Draw {
    pub drop: bool,
    pub t: usize,
    pub eps: Vec<f64>,
}

pub fn oracle_draw(seed: u64, index: usize, timesteps: usize, drop_prob: f64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let drop = rng.random::<f64>() < drop_prob;
    let t = rng.random_range(0..timesteps);
    let eps = (0..3 * N * N).map(|_| StandardNormal.sample(&mut rng)).collect();
    Draw { drop, t, eps }
}

/// Input channels `[x_t, signed background * (1 - m), m]` built by loops.
pub fn oracle_input(target: &ImageBuffer<f64>, bg: &ImageBuffer<f64>, mask: &MaskBuffer<f64>, d: &Draw, timesteps: usize) -> Vec<f64> {
    let ab = oracle_alpha_bar(d.t, timesteps);
    let mut x = vec![0.0; 7 * N * N];
    for c in 0..3 {
        for r in 0..N {
            for col in 0..N {
                let k = (c * N + r) * N + col;
                let x0 = 2.0 * target.get(r, col, c) - 1.0;
                x[k] = ab.sqrt() * x0 + (1.0 - ab).sqrt() * d.eps[k];
                let m = mask.get(r, col);
                x[3 * N * N + k] = (2.0 * bg.get(r, col, c) - 1.0) * (1.0 - m);
                x[6 * N * N + r * N + col] = m;
            }
        }
    }
    x
}

pub fn predict(model: &Denoiser<f64>, enc: &Encoder<f64>, x: Vec<f64>, t: usize, object: &ImageBuffer<f64>, drop: bool) -> Vec<f64> {
    let cond = if drop {
        enc.null_tokens().tokens
    } else {
        enc.adapt(&enc.encode_tokens(object).unwrap()).unwrap().tokens
    };
    let input = DenoiserInput {
        main: Tensor::from_vec(&[7, N, N], x).unwrap(),
        hint: None,
    };
    model.predict_eps(&input, t, &cond).unwrap().into_data()
}

/// Masked squared noise error over the batch, one element at a time.
pub fn oracle_loss_comp(batch: &[CompositeExample<f64>], den: &Denoiser<f64>, enc: &Encoder<f64>, timesteps: usize, seed: u64, drop_prob: f64) -> f64 {
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let d = oracle_draw(seed, i, timesteps, drop_prob);
        let x = oracle_input(&ex.target, &ex.background, &ex.mask, &d, timesteps);
        let pred = predict(den, enc, x, d.t, &ex.object_image, d.drop);
        for (k, (p, e)) in pred.iter().zip(&d.eps).enumerate().take(3 * N * N) {
            let w = ex.mask.data()[k % (N * N)];
            total += w * (p - e).powi(2);
        }
    }
    total / (batch.len() * 3 * N * N) as f64
}

/// Unweighted noise error with an empty background and a full mask.
pub fn oracle_loss_id(batch: &[ViewPairExample<f64>], den: &Denoiser<f64>, enc: &Encoder<f64>, timesteps: usize, seed: u64, drop_prob: f64) -> f64 {
    let black = ImageBuffer::<f64>::zeros(N, N).unwrap();
    let ones = MaskBuffer::<f64>::filled(N, N, 1.0).unwrap();
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let d = oracle_draw(seed, i, timesteps, drop_prob);
        let x = oracle_input(&ex.target_view, &black, &ones, &d, timesteps);
        let pred = predict(den, enc, x, d.t, &ex.source_view, d.drop);
        total += pred.iter().zip(&d.eps).map(|(p, e)| (p - e).powi(2)).sum::<f64>();
    }
    total / (batch.len() * 3 * N * N) as f64
}

pub fn models() -> (Denoiser<f64>, Encoder<f64>) {
    let den = Denoiser::new(tiny_denoiser(N, Variant::CrossAttention), 7).unwrap();
    let enc = Encoder::new(tiny_encoder(N, 4), 8).unwrap();
    (den, enc)
}

/// Central differences over every parameter of both models.
pub fn max_relative_gradient_error(den: &mut Denoiser<f64>, enc: &mut Encoder<f64>, batch: &[CompositeExample<f64>]) -> f64 {
    let schedule = make_schedule(50).unwrap();
    let opts = LossOptions::new(0.0, 11);
    let grads = loss_comp(batch, &*den, &*enc, &schedule, opts).unwrap().grads;
    let h = 1e-5;
    let mut worst: f64 = 0.0;

    fn perturb(store: &mut ParamStore<f64>, i: usize, k: usize, delta: f64) {
        store.entries_mut()[i].value.data_mut()[k] += delta;
    }
    for which in 0..2 {
        let len = if which == 0 { enc.params().len() } else { den.params().len() };
        for i in 0..len {
            let (tag, numel) = if which == 0 {
                (enc.params().tag(), enc.params().entries()[i].value.numel())
            } else {
                (den.params().tag(), den.params().entries()[i].value.numel())
            };
            let analytic = grads.map.get(&ParamKey { store: tag, index: i }).cloned();
            for k in 0..numel {
                let mut eval = |delta: f64| {
                    if which == 0 {
                        perturb(enc.params_mut(), i, k, delta);
                    } else {
                        perturb(den.params_mut(), i, k, delta);
                    }
                    let l = loss_comp(batch, &*den, &*enc, &schedule, LossOptions { with_grads: false, ..opts }).unwrap().loss;
                    if which == 0 {
                        perturb(enc.params_mut(), i, k, -delta);
                    } else {
                        perturb(den.params_mut(), i, k, -delta);
                    }
                    l
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.as_ref().map_or(0.0, |g| g.data()[k]);
                let scale = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
    }
    worst
}

/// Union of 1-4 random ellipses, never empty.
pub fn random_blob(n: usize, r: &mut ChaCha8Rng) -> MaskBuffer<f32> {
    let k = r.random_range(1..=4);
    let parts: Vec<(f64, f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                r.random_range(0.0..n as f64),
                r.random_range(0.0..n as f64),
                r.random_range(1.0..n as f64 / 3.0),
                r.random_range(1.0..n as f64 / 3.0),
                r.random_range(0.0..std::f64::consts::PI),
            )
        })
        .collect();
    let seed_px = (parts[0].0.min(n as f64 - 1.0) as usize, parts[0].1.min(n as f64 - 1.0) as usize);
    MaskBuffer::from_fn(n, n, |y, x| {
        (y, x) == seed_px
            || parts.iter().any(|&(cy, cx, a, b, th)| {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let u = dx * th.cos() + dy * th.sin();
                let v = -dx * th.sin() + dy * th.cos();
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            })
    })
    .unwrap()
}

pub fn brute_bbox(m: &MaskBuffer<f32>) -> MaskBuffer<f32> {
    let (mut t, mut l, mut b, mut r) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(y, x) > 0.5 {
                t = t.min(y);
                l = l.min(x);
                b = b.max(y);
                r = r.max(x);
            }
        }
    }
    MaskBuffer::from_fn(m.height(), m.width(), |y, x| y >= t && y <= b && x >= l && x <= r).unwrap()
}

pub fn subset(a: &MaskBuffer<f32>, b: &MaskBuffer<f32>) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| x <= 0.5 || y > 0.5)
}

pub fn to_stats(mean: &DVector<f64>, cov: &DMatrix<f64>) -> FeatureStats {
    let d = mean.len();
    FeatureStats {
        count: 1000,
        mean: mean.iter().copied().collect(),
        covariance: (0..d * d).map(|k| cov[(k / d, k % d)]).collect(),
    }
}

pub fn random_psd(d: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d + 2, |_, _| r.random_range(-1.0..1.0));
    &a * a.transpose() / (d + 2) as f64
}

pub fn random_mean(d: usize, r: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.random_range(-2.0..2.0))
}

/// `tr((Sa Sb)^(1/2))` from the Cholesky factor `Sa = L L^T`: the
/// eigenvalues of `L^T Sb L` equal those of `Sa Sb`.
pub fn oracle_fid(ma: &DVector<f64>, sa: &DMatrix<f64>, mb: &DVector<f64>, sb: &DMatrix<f64>) -> f64 {
    let l = sa.clone().cholesky().unwrap().l();
    let inner = l.transpose() * sb * &l;
    let tr_sqrt: f64 = inner.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).sum();
    (ma - mb).norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt
}

pub fn brute_silhouette(e: &[Vec<f64>], labels: &[u32]) -> f64 {
    let dist = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..e.len() {
        let mut own = (0.0, 0usize);
        let mut others: std::collections::HashMap<u32, (f64, usize)> = Default::default();
        for j in 0..e.len() {
            if i == j {
                continue;
            }
            let d = dist(&e[i], &e[j]);
            if labels[j] == labels[i] {
                own.0 += d;
                own.1 += 1;
            } else {
                let s = others.entry(labels[j]).or_default();
                s.0 += d;
                s.1 += 1;
            }
        }
        let a = own.0 / own.1 as f64;
        let b = others.values().map(|(s, n)| s / *n as f64).fold(f64::INFINITY, f64::min);
        total += if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
    }
    total / e.len() as f64
}

pub fn clustered(points: usize, clusters: u32, dim: usize, spread: f64, r: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u32>) {
    let centres: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| r.random_range(-10.0..10.0)).collect()).collect();
    let labels: Vec<u32> = (0..points).map(|i| i as u32 % clusters).collect();
    let e = labels
        .iter()
        .map(|&l| centres[l as usize].iter().map(|c| c + r.random_range(-spread..spread)).collect())
        .collect();
    (e, labels)
}

