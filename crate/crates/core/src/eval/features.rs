//! Image embedders and the cosine similarity score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::fid::FeatureStats;
use crate::graph::Graph;
use crate::image::ImageBuffer;
use crate::nn::Conv2d;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Maps an image to one embedding vector.
pub trait Embedder<T: Scalar> {
    /// Identifier recorded in reports.
    fn id(&self) -> String;
    /// Side length images are resized to before embedding.
    fn input_size(&self) -> usize;
    fn embed(&self, image: &ImageBuffer<T>) -> Result<Vec<f64>>;
}

impl<T: Scalar> Embedder<T> for Encoder<T> {
    fn id(&self) -> String {
        let c = self.config();
        format!("encoder-cls-d{}-l{}-p{}", c.embed_dim, c.depth, c.patch_size)
    }

    fn input_size(&self) -> usize {
        self.config().image_size
    }

    fn embed(&self, image: &ImageBuffer<T>) -> Result<Vec<f64>> {
        let n = self.config().image_size;
        let v = Encoder::embed(self, &image.resize(n, n))?;
        Ok(v.into_iter().map(|x| x.f64()).collect())
    }
}

/// Fixed, seed-initialized conv net: three stride-2 3x3 convolutions with
/// SiLU, then per-channel spatial means. Never trained.
#[derive(Debug, Clone)]
pub struct RandomConvFeatures {
    store: ParamStore<f64>,
    layers: Vec<Conv2d>,
    input_size: usize,
    seed: u64,
}

pub const RANDOM_FEATURE_CHANNELS: [usize; 3] = [8, 16, 16];

impl RandomConvFeatures {
    pub fn new(input_size: usize, seed: u64) -> Result<Self> {
        if input_size < 8 {
            return Err(Error::Argument(format!("feature input size {input_size} below 8")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(0);
        let mut c_in = 3;
        let mut layers = Vec::new();
        for (i, &c) in RANDOM_FEATURE_CHANNELS.iter().enumerate() {
            layers.push(Conv2d::new(&mut store, &format!("feat.conv{i}"), "features", c_in, c, 3, 2, &mut rng));
            c_in = c;
        }
        Ok(RandomConvFeatures {
            store,
            layers,
            input_size,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        RANDOM_FEATURE_CHANNELS[RANDOM_FEATURE_CHANNELS.len() - 1]
    }
}

impl<T: Scalar> Embedder<T> for RandomConvFeatures {
    fn id(&self) -> String {
        format!("random-conv-{}-s{}", self.input_size, self.seed)
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn embed(&self, image: &ImageBuffer<T>) -> Result<Vec<f64>> {
        let n = self.input_size;
        let x = image.resize(n, n).cast::<f64>().to_signed_chw();
        let mut g = Graph::new();
        let mut h = g.constant(x);
        for layer in &self.layers {
            h = layer.forward(&mut g, &self.store, h)?;
            h = g.silu(h);
        }
        let out = g.value(h);
        let c = out.shape()[0];
        let hw = out.numel() / c;
        Ok(out.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect())
    }
}

/// `100 * cos(a, b)`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("embedding lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateEmbedding(format!("embedding norms {na} and {nb}")));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((100.0 * dot / (na * nb)).clamp(-100.0, 100.0))
}

/// Embedding similarity of two crops, in `[-100, 100]`.
pub fn similarity_score<T: Scalar, E: Embedder<T> + ?Sized>(
    generated: &ImageBuffer<T>,
    reference: &ImageBuffer<T>,
    extractor: &E,
) -> Result<f64> {
    cosine_score(&extractor.embed(generated)?, &extractor.embed(reference)?)
}

/// Gaussian statistics of extractor features over an image set.
pub fn feature_stats<T: Scalar, E: Embedder<T> + ?Sized>(images: &[ImageBuffer<T>], extractor: &E) -> Result<FeatureStats> {
    let feats = images.iter().map(|i| extractor.embed(i)).collect::<Result<Vec<_>>>()?;
    FeatureStats::from_features(&feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_score(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn random_features_are_deterministic() {
        let f = RandomConvFeatures::new(16, 3).unwrap();
        let img = ImageBuffer::<f32>::filled(20, 20, [0.1, 0.5, 0.9]).unwrap();
        let a = Embedder::<f32>::embed(&f, &img).unwrap();
        assert_eq!(a.len(), f.dim());
        assert_eq!(a, Embedder::<f32>::embed(&RandomConvFeatures::new(16, 3).unwrap(), &img).unwrap());
        assert_ne!(a, Embedder::<f32>::embed(&RandomConvFeatures::new(16, 4).unwrap(), &img).unwrap());
    }
}
