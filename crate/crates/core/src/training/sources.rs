//! Indexable example sources for the training loops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    build_stage1_example, build_stage2_example, AugmentParams, CompositeExample, Dataset, MaskLevel, Stage2Source,
    ViewPairExample,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A finite set of examples addressed by index. `seed` lets a source vary
/// what it returns for the same index across epochs.
pub trait ExampleSource<E> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn example(&self, index: usize, seed: u64) -> Result<E>;
}

/// Fixed examples, returned as-is regardless of seed.
#[derive(Debug, Clone)]
pub struct FixedExamples<E>(pub Vec<E>);

impl<E: Clone> ExampleSource<E> for FixedExamples<E> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn example(&self, index: usize, _seed: u64) -> Result<E> {
        self.0
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Argument(format!("example {index} out of range")))
    }
}

/// One entry per multi-view object; each draw picks a fresh view pair.
#[derive(Debug, Clone)]
pub struct ViewPairs<'a, T> {
    dataset: &'a Dataset<T>,
    objects: Vec<u32>,
}

impl<'a, T: Scalar> ViewPairs<'a, T> {
    pub fn new(dataset: &'a Dataset<T>) -> Result<Self> {
        let objects: Vec<u32> = dataset.multiview.keys().copied().collect();
        if objects.is_empty() {
            return Err(Error::Dataset("no multi-view objects".into()));
        }
        if let Some((id, v)) = dataset.multiview.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Dataset(format!(
                "object {id} has {} view(s); view pairs need at least 2",
                v.len()
            )));
        }
        Ok(ViewPairs { dataset, objects })
    }
}

impl<T: Scalar> ExampleSource<ViewPairExample<T>> for ViewPairs<'_, T> {
    fn len(&self) -> usize {
        self.objects.len()
    }

    fn example(&self, index: usize, seed: u64) -> Result<ViewPairExample<T>> {
        build_stage1_example(&self.dataset.multiview[&self.objects[index]], seed)
    }
}

/// One entry per scene; each draw picks a video or augmented-image source
/// and a random mask level.
#[derive(Debug, Clone)]
pub struct ScenePairs<'a, T> {
    dataset: &'a Dataset<T>,
    scenes: Vec<u32>,
    window: usize,
    video_fraction: f64,
}

const AUGMENT_RETRIES: u64 = 8;

impl<'a, T: Scalar> ScenePairs<'a, T> {
    pub fn new(dataset: &'a Dataset<T>, window: usize, video_fraction: f64) -> Result<Self> {
        let scenes: Vec<u32> = dataset.scenes.keys().copied().collect();
        if scenes.is_empty() {
            return Err(Error::Dataset("no scenes".into()));
        }
        Ok(ScenePairs {
            dataset,
            scenes,
            window,
            video_fraction,
        })
    }
}

impl<T: Scalar> ExampleSource<CompositeExample<T>> for ScenePairs<'_, T> {
    fn len(&self) -> usize {
        self.scenes.len()
    }

    fn example(&self, index: usize, seed: u64) -> Result<CompositeExample<T>> {
        let frames = &self.dataset.scenes[&self.scenes[index]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level = MaskLevel::new(rng.random_range(1..=4))?;
        let use_video = frames.len() >= 2 && rng.random::<f64>() < self.video_fraction;
        let example_seed: u64 = rng.random();
        if use_video {
            let source = Stage2Source::Video { window: self.window };
            return build_stage2_example(frames, &source, level, example_seed);
        }
        // Augmentations occasionally push the object out of frame; retry
        // with fresh parameters and fall back to no geometric change.
        for _ in 0..AUGMENT_RETRIES {
            let source = Stage2Source::Image {
                augment: AugmentParams::sample(rng.random()),
            };
            match build_stage2_example(frames, &source, level, example_seed) {
                Err(Error::DegenerateAugmentation(_)) => continue,
                other => return other,
            }
        }
        let mut augment = AugmentParams::sample(rng.random());
        augment.affine = AugmentParams::identity().affine;
        build_stage2_example(frames, &Stage2Source::Image { augment }, level, example_seed)
    }
}
