//! Object encoder: a ViT backbone followed by a content adapter that maps
//! backbone tokens into the conditioning space read by the denoiser's
//! cross-attention layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{ImageBuffer, CHANNELS};
use crate::nn::{LayerNorm, Linear, TransformerBlock};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const ENCODER_STORE_TAG: u32 = 1;

pub const BACKBONE_GROUP: &str = "backbone";
pub const ADAPTER_GROUP: &str = "adapter";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub adapter_depth: usize,
    pub cond_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 128,
            depth: 4,
            heads: 4,
            adapter_depth: 2,
            cond_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !self.cond_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "cond dim {} not divisible by {} heads",
                self.cond_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    /// Tokens per image: one per patch plus the class token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }
}

/// Conditioning sequence `[tokens, cond_dim]` consumed by cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTokens<T> {
    pub tokens: Tensor<T>,
    pub is_null: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderPart {
    Backbone,
    Adapter,
}

impl std::str::FromStr for EncoderPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(EncoderPart::Backbone),
            "adapter" => Ok(EncoderPart::Adapter),
            other => Err(Error::Config(format!("unknown encoder part `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: EncoderConfig,
    store: ParamStore<T>,
    patch_embed: Linear,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    adapter_in: Linear,
    adapter_blocks: Vec<TransformerBlock>,
    adapter_norm: LayerNorm,
    adapter_out: Linear,
    null_tokens: ParamId,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(ENCODER_STORE_TAG);
        let c = &config;
        let patch_dim = c.patch_size * c.patch_size * CHANNELS;
        let bb = BACKBONE_GROUP;
        let patch_embed = Linear::new(&mut store, "backbone.patch", bb, patch_dim, c.embed_dim, &mut rng);
        let cls = store.add("backbone.cls", bb, Tensor::randn(&[1, c.embed_dim], 0.02, &mut rng));
        let pos = store.add(
            "backbone.pos",
            bb,
            Tensor::randn(&[c.tokens(), c.embed_dim], 0.02, &mut rng),
        );
        let blocks = (0..c.depth)
            .map(|i| TransformerBlock::new(&mut store, &format!("backbone.block{i}"), bb, c.embed_dim, c.heads, &mut rng))
            .collect();
        let norm = LayerNorm::new(&mut store, "backbone.norm", bb, c.embed_dim);

        let ad = ADAPTER_GROUP;
        let adapter_in = Linear::new(&mut store, "adapter.in", ad, c.embed_dim, c.cond_dim, &mut rng);
        let adapter_blocks = (0..c.adapter_depth)
            .map(|i| TransformerBlock::new(&mut store, &format!("adapter.block{i}"), ad, c.cond_dim, c.heads, &mut rng))
            .collect();
        let adapter_norm = LayerNorm::new(&mut store, "adapter.norm", ad, c.cond_dim);
        let adapter_out = Linear::new(&mut store, "adapter.out", ad, c.cond_dim, c.cond_dim, &mut rng);
        let null_tokens = store.add(
            "adapter.null",
            ad,
            Tensor::randn(&[c.tokens(), c.cond_dim], 0.1, &mut rng),
        );
        Ok(Encoder {
            config,
            store,
            patch_embed,
            cls,
            pos,
            blocks,
            norm,
            adapter_in,
            adapter_blocks,
            adapter_norm,
            adapter_out,
            null_tokens,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn set_trainable(&mut self, part: EncoderPart, trainable: bool) {
        let group = match part {
            EncoderPart::Backbone => BACKBONE_GROUP,
            EncoderPart::Adapter => ADAPTER_GROUP,
        };
        self.store
            .set_group_trainable(group, trainable)
            .expect("encoder groups exist");
    }

    /// Name-based variant of [`Encoder::set_trainable`].
    pub fn set_trainable_named(&mut self, part: &str, trainable: bool) -> Result<()> {
        self.set_trainable(part.parse()?, trainable);
        Ok(())
    }

    /// Zeroes the adapter's output projection.
    pub fn zero_adapter_output(&mut self) {
        self.adapter_out.zero_init(&mut self.store);
    }

    /// Splits an image into flattened patches `[patches, p*p*3]` in `[-1, 1]`.
    pub fn patchify(&self, image: &ImageBuffer<T>) -> Result<Tensor<T>> {
        let n = self.config.image_size;
        image.same_size(n, n, "encoder input")?;
        let p = self.config.patch_size;
        let per_side = n / p;
        let mut data = Vec::with_capacity(n * n * CHANNELS);
        let two = T::c(2.0);
        for pr in 0..per_side {
            for pc in 0..per_side {
                for dy in 0..p {
                    for dx in 0..p {
                        for v in image.pixel(pr * p + dy, pc * p + dx) {
                            data.push(v * two - T::one());
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[per_side * per_side, p * p * CHANNELS], data)
    }

    /// Backbone forward on a patch tensor already in the graph.
    pub fn backbone_graph(&self, g: &mut Graph<T>, patches: Var) -> Result<Var> {
        let s = &self.store;
        let x = self.patch_embed.forward(g, s, patches)?;
        let cls = g.param(s, self.cls);
        let x = g.concat0(&[cls, x])?;
        let pos = g.param(s, self.pos);
        let mut x = g.add(x, pos)?;
        for b in &self.blocks {
            x = b.forward(g, s, x)?;
        }
        self.norm.forward(g, s, x)
    }

    /// Backbone tokens `[tokens, embed_dim]`, class token first.
    pub fn encode_tokens_graph(&self, g: &mut Graph<T>, image: &ImageBuffer<T>) -> Result<Var> {
        let patches = g.constant(self.patchify(image)?);
        self.backbone_graph(g, patches)
    }

    pub fn encode_tokens(&self, image: &ImageBuffer<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = self.encode_tokens_graph(&mut g, image)?;
        Ok(g.value(v).clone())
    }

    /// Per-token adapter; preserves the token count.
    pub fn adapt_graph(&self, g: &mut Graph<T>, tokens: Var) -> Result<Var> {
        let s = &self.store;
        let mut x = self.adapter_in.forward(g, s, tokens)?;
        for b in &self.adapter_blocks {
            x = b.forward(g, s, x)?;
        }
        let x = self.adapter_norm.forward(g, s, x)?;
        self.adapter_out.forward(g, s, x)
    }

    pub fn adapt(&self, tokens: &Tensor<T>) -> Result<ConditioningTokens<T>> {
        let mut g = Graph::new();
        let t = g.constant(tokens.clone());
        let v = self.adapt_graph(&mut g, t)?;
        Ok(ConditioningTokens {
            tokens: g.value(v).clone(),
            is_null: false,
        })
    }

    pub fn null_tokens_graph(&self, g: &mut Graph<T>) -> Var {
        g.param(&self.store, self.null_tokens)
    }

    pub fn null_tokens(&self) -> ConditioningTokens<T> {
        ConditioningTokens {
            tokens: self.store.value(self.null_tokens).clone(),
            is_null: true,
        }
    }

    /// `adapt(encode_tokens(image))` inside a graph.
    pub fn tokens_graph(&self, g: &mut Graph<T>, image: &ImageBuffer<T>) -> Result<Var> {
        let t = self.encode_tokens_graph(g, image)?;
        self.adapt_graph(g, t)
    }

    /// Conditioning with classifier-free dropout: with probability
    /// `drop_prob` the learned null sequence replaces the image tokens.
    /// Returns the token node and whether it is the null sequence.
    pub fn condition_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        image: &ImageBuffer<T>,
        drop_prob: f64,
        rng: &mut R,
    ) -> Result<(Var, bool)> {
        if drop_should_fire(drop_prob, rng)? {
            Ok((self.null_tokens_graph(g), true))
        } else {
            Ok((self.tokens_graph(g, image)?, false))
        }
    }

    pub fn condition<R: Rng + ?Sized>(
        &self,
        image: &ImageBuffer<T>,
        drop_prob: f64,
        rng: &mut R,
    ) -> Result<ConditioningTokens<T>> {
        if drop_should_fire(drop_prob, rng)? {
            Ok(self.null_tokens())
        } else {
            self.adapt(&self.encode_tokens(image)?)
        }
    }

    /// Class-token embedding of the backbone, used for similarity and
    /// clustering.
    pub fn embed(&self, image: &ImageBuffer<T>) -> Result<Vec<T>> {
        let tokens = self.encode_tokens(image)?;
        Ok(tokens.data()[..self.config.embed_dim].to_vec())
    }
}

/// One Bernoulli draw for conditioning dropout.
pub fn drop_should_fire<R: Rng + ?Sized>(drop_prob: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::Argument(format!("drop probability {drop_prob} outside [0, 1]")));
    }
    Ok(rng.random::<f64>() < drop_prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            image_size: 16,
            patch_size: 8,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            adapter_depth: 1,
            cond_dim: 8,
        }
    }

    fn image(seed: u64, n: usize) -> ImageBuffer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::new(n, n, (0..n * n * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.tokens(), 65);
        c.patch_size = 7;
        assert!(c.validate().is_err());
        let c = EncoderConfig { heads: 3, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn token_counts_are_preserved() {
        let enc = Encoder::<f64>::new(tiny(), 0).unwrap();
        let t = enc.encode_tokens(&image(1, 16)).unwrap();
        assert_eq!(t.shape(), &[5, 16]);
        let a = enc.adapt(&t).unwrap();
        assert_eq!(a.tokens.shape(), &[5, 8]);
        assert_eq!(enc.null_tokens().tokens.shape(), &[5, 8]);
    }

    #[test]
    fn sensitive_to_a_single_patch() {
        let enc = Encoder::<f64>::new(tiny(), 0).unwrap();
        let a = image(2, 16);
        let mut data = a.data().to_vec();
        for v in &mut data[..8 * 3] {
            *v = 1.0 - *v;
        }
        let b = ImageBuffer::new(16, 16, data).unwrap();
        assert_ne!(enc.encode_tokens(&a).unwrap(), enc.encode_tokens(&b).unwrap());
    }

    #[test]
    fn zero_adapter_output_gives_zero_tokens() {
        let mut enc = Encoder::<f64>::new(tiny(), 0).unwrap();
        enc.zero_adapter_output();
        let c = enc.condition(&image(3, 16), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(c.tokens.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_extremes() {
        let enc = Encoder::<f32>::new(tiny(), 0).unwrap();
        let img = image(4, 16).cast::<f32>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(!enc.condition(&img, 0.0, &mut rng).unwrap().is_null);
            assert!(enc.condition(&img, 1.0, &mut rng).unwrap().is_null);
        }
        assert!(drop_should_fire(1.5, &mut rng).is_err());
        assert!(drop_should_fire(0.0, &mut rng).map(|b| !b).unwrap());
        let mut hits = 0;
        for _ in 0..1000 {
            hits += drop_should_fire(0.0, &mut rng).unwrap() as usize;
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn unknown_part_is_a_config_error() {
        let mut enc = Encoder::<f32>::new(tiny(), 0).unwrap();
        assert!(matches!(enc.set_trainable_named("decoder", false), Err(Error::Config(_))));
        enc.set_trainable_named("backbone", false).unwrap();
    }

    #[test]
    fn deterministic_tokens() {
        let enc = Encoder::<f64>::new(tiny(), 7).unwrap();
        let img = image(5, 16);
        assert_eq!(enc.encode_tokens(&img).unwrap(), enc.encode_tokens(&img).unwrap());
        let enc2 = Encoder::<f64>::new(tiny(), 7).unwrap();
        assert_eq!(enc.params(), enc2.params());
    }
}
