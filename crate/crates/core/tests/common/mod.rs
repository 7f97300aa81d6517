#![allow(dead_code)]

pub mod oracles;

use objcomp::data::{CompositeExample, MaskLevel, ViewPairExample};
use objcomp::diffusion::{DenoiserConfig, Variant};
use objcomp::encoder::EncoderConfig;
use objcomp::{ImageBuffer, MaskBuffer, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_encoder(image_size: usize, cond_dim: usize) -> EncoderConfig {
    EncoderConfig {
        image_size,
        patch_size: 4,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        adapter_depth: 1,
        cond_dim,
    }
}

pub fn tiny_denoiser(image_size: usize, variant: Variant) -> DenoiserConfig {
    DenoiserConfig {
        image_size,
        base_channels: 4,
        channel_multipliers: vec![1, 2],
        attn_resolutions: vec![image_size / 2],
        cond_dim: 4,
        ..DenoiserConfig::default()
    }
    .with_variant(variant)
}

pub fn random_image<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> ImageBuffer<T> {
    ImageBuffer::new(n, n, (0..n * n * 3).map(|_| T::c(rng.random_range(0.0..1.0))).collect()).unwrap()
}

/// Axis-aligned rectangle mask with random corners, at least 2x2.
pub fn random_rect_mask<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> MaskBuffer<T> {
    let t = rng.random_range(0..n - 2);
    let l = rng.random_range(0..n - 2);
    let b = rng.random_range(t + 2..=n);
    let r = rng.random_range(l + 2..=n);
    MaskBuffer::from_fn(n, n, |y, x| y >= t && y < b && x >= l && x < r).unwrap()
}

pub fn random_composite<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> CompositeExample<T> {
    let object_mask = random_rect_mask::<T>(n, rng);
    let raw = random_image::<T>(n, rng);
    let object_image = objcomp::data::segment_object(&raw, &object_mask).unwrap();
    let target = random_image(n, rng);
    let mask = random_rect_mask(n, rng);
    CompositeExample::from_parts(
        object_image,
        object_mask,
        target,
        mask.clone(),
        mask,
        MaskLevel::new(4).unwrap(),
    )
    .unwrap()
}

pub fn random_view_pair<T: Scalar>(n: usize, rng: &mut ChaCha8Rng) -> ViewPairExample<T> {
    ViewPairExample {
        source_view: random_image(n, rng),
        target_view: random_image(n, rng),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_synthetic() -> objcomp::data::SyntheticConfig {
    objcomp::data::SyntheticConfig {
        objects: 4,
        views_per_object: 3,
        frames_per_scene: 8,
        image_size: 16,
        seed: 2,
    }
}

/// A fast experiment at 16px with tiny models.
pub fn small_experiment(stage: u8, epochs: usize) -> objcomp::training::ExperimentConfig {
    use objcomp::training::{ExperimentConfig, TrainPlan};
    let mut plan = if stage == 1 { TrainPlan::stage1() } else { TrainPlan::stage2() };
    plan.epochs = epochs;
    plan.batch_size = 3;
    ExperimentConfig {
        plan,
        encoder: tiny_encoder(16, 4),
        denoiser: tiny_denoiser(16, Variant::CrossAttention),
        timesteps: 100,
        ..ExperimentConfig::default()
    }
}
