//! Training example assembly for both stages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::augment::{augment_object, AugmentParams};
use crate::data::frames::sample_frame_pair_with;
use crate::data::mask::{coarsen_mask, MaskLevel};
use crate::data::segment::segment_object;
use crate::data::synthetic::View;
use crate::error::{Error, Result};
use crate::image::{ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;

/// Two segmented views of the same object.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPairExample<T> {
    pub source_view: ImageBuffer<T>,
    pub target_view: ImageBuffer<T>,
}

/// `(object, background, coarse mask, target)` compositing tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeExample<T> {
    /// Segmented object (background removed).
    pub object_image: ImageBuffer<T>,
    /// Mask of `object_image`.
    pub object_mask: MaskBuffer<T>,
    /// Target with the coarse-mask region removed.
    pub background: ImageBuffer<T>,
    /// Coarse mask at `mask_level`.
    pub mask: MaskBuffer<T>,
    /// Unmodified scene.
    pub target: ImageBuffer<T>,
    /// Fine segmentation of the object in `target`.
    pub target_object_mask: MaskBuffer<T>,
    pub mask_level: MaskLevel,
}

impl<T: Scalar> CompositeExample<T> {
    /// Checks that the coarse mask covers the target object's footprint.
    pub fn mask_contains_target(&self) -> bool {
        self.target_object_mask
            .data()
            .iter()
            .zip(self.mask.data())
            .all(|(&fine, &coarse)| fine <= T::c(0.5) || coarse > T::c(0.5))
    }

    /// Builds an example from explicit parts, deriving the background from
    /// `target` and `mask`.
    pub fn from_parts(
        object_image: ImageBuffer<T>,
        object_mask: MaskBuffer<T>,
        target: ImageBuffer<T>,
        target_object_mask: MaskBuffer<T>,
        mask: MaskBuffer<T>,
        mask_level: MaskLevel,
    ) -> Result<Self> {
        let background = masked_background(&target, &mask)?;
        Ok(CompositeExample {
            object_image,
            object_mask,
            background,
            mask,
            target,
            target_object_mask,
            mask_level,
        })
    }
}

/// `target * (1 - mask)`.
pub fn masked_background<T: Scalar>(target: &ImageBuffer<T>, mask: &MaskBuffer<T>) -> Result<ImageBuffer<T>> {
    let inv = MaskBuffer::new(
        mask.height(),
        mask.width(),
        mask.data().iter().map(|&m| T::one() - m).collect(),
    )?;
    segment_object(target, &inv)
}

/// Picks two distinct views and segments both.
pub fn build_stage1_example<T: Scalar>(views: &[View<T>], rng_seed: u64) -> Result<ViewPairExample<T>> {
    if views.len() < 2 {
        return Err(Error::Dataset(format!(
            "view pairs need at least 2 views per object, got {}",
            views.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let a = rng.random_range(0..views.len());
    let mut b = rng.random_range(0..views.len() - 1);
    if b >= a {
        b += 1;
    }
    Ok(ViewPairExample {
        source_view: segment_object(&views[a].image, &views[a].mask)?,
        target_view: segment_object(&views[b].image, &views[b].mask)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage2Source {
    /// Object from a different frame at most `window` frames away.
    Video { window: usize },
    /// Object from the target frame itself, perturbed by `augment`.
    Image { augment: AugmentParams },
}

/// Frame indices `(object_frame, target_frame)` chosen for a stage-2 example.
pub fn stage2_frames(frame_count: usize, source: &Stage2Source, rng_seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match source {
        Stage2Source::Video { window } => sample_frame_pair_with(frame_count, *window, &mut rng),
        Stage2Source::Image { .. } => {
            if frame_count == 0 {
                return Err(Error::Dataset("scene has no frames".into()));
            }
            let b = rng.random_range(0..frame_count);
            Ok((b, b))
        }
    }
}

pub fn build_stage2_example<T: Scalar>(
    frames: &[View<T>],
    source: &Stage2Source,
    level: MaskLevel,
    rng_seed: u64,
) -> Result<CompositeExample<T>> {
    let (a, b) = stage2_frames(frames.len(), source, rng_seed)?;
    let target = &frames[b];
    let segmented = segment_object(&frames[a].image, &frames[a].mask)?;
    let (object_image, object_mask) = match source {
        Stage2Source::Video { .. } => (segmented, frames[a].mask.binarized()),
        Stage2Source::Image { augment } => augment_object(&segmented, &frames[a].mask, augment)?,
    };
    let mask = coarsen_mask(&target.mask, level, rng_seed)?;
    CompositeExample::from_parts(
        object_image,
        object_mask,
        target.image.clone(),
        target.mask.binarized(),
        mask,
        level,
    )
}
