#![allow(dead_code)]

use std::path::Path;

use objcomp::diffusion::DenoiserConfig;
use objcomp::encoder::EncoderConfig;
use objcomp::training::{save_checkpoint, TrainPlan, TrainState};
use objcomp::{Image, Mask};

pub const SIZE: usize = 16;

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        image_size: SIZE,
        patch_size: 4,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        adapter_depth: 1,
        cond_dim: 4,
    }
}

pub fn tiny_denoiser() -> DenoiserConfig {
    DenoiserConfig {
        image_size: SIZE,
        base_channels: 4,
        channel_multipliers: vec![1, 2],
        attn_resolutions: vec![SIZE / 2],
        cond_dim: 4,
        ..DenoiserConfig::default()
    }
}

pub fn tiny_state(seed: u64) -> TrainState<f32> {
    let mut plan = TrainPlan::stage2();
    plan.seed = seed;
    TrainState::new(plan, tiny_encoder(), tiny_denoiser(), 50).unwrap()
}

pub fn write_checkpoint(path: &Path, seed: u64) {
    save_checkpoint(&tiny_state(seed), path).unwrap();
}

/// Smooth colour ramp so every 8-bit value round-trips.
pub fn background() -> Image {
    let data = (0..SIZE * SIZE * 3).map(|i| ((i * 37) % 256) as f32 / 255.0).collect();
    Image::new(SIZE, SIZE, data).unwrap()
}

pub fn object() -> Image {
    let mut img = Image::zeros(SIZE, SIZE).unwrap();
    for r in 4..12 {
        for c in 5..11 {
            img.set_pixel(r, c, [0.8, 0.2, 0.1]);
        }
    }
    img
}

pub fn rect_mask(r0: usize, r1: usize, c0: usize, c1: usize) -> Mask {
    Mask::from_fn(SIZE, SIZE, |r, c| (r0..r1).contains(&r) && (c0..c1).contains(&c)).unwrap()
}

pub fn empty_mask() -> Mask {
    Mask::from_fn(SIZE, SIZE, |_, _| false).unwrap()
}

/// Partial experiment TOML for a one-epoch run on a tiny model.
pub fn experiment_toml(stage: u8, data_dir: &Path, output_dir: &Path) -> String {
    format!(
        r#"output_dir = "{out}"
timesteps = 50

[plan]
stage = {stage}
epochs = 2
batch_size = 2

[encoder]
image_size = {SIZE}
patch_size = 4
embed_dim = 8
depth = 1
heads = 2
adapter_depth = 1
cond_dim = 4

[denoiser]
image_size = {SIZE}
base_channels = 4
channel_multipliers = [1, 2]
attn_resolutions = [{half}]
cond_dim = 4

[data]
dir = "{data}"
"#,
        out = output_dir.display(),
        data = data_dir.display(),
        half = SIZE / 2,
    )
}
