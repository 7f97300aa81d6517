//! Training-pair generation: segmentation, colour LUTs, augmentation,
//! video pair sampling, mask coarsening and the synthetic dataset.

pub mod augment;
pub mod examples;
pub mod fit;
pub mod frames;
pub mod lut;
pub mod mask;
pub mod segment;
pub mod synthetic;

pub use augment::{augment_object, warp_affine, Affine, AugmentParams};
pub use examples::{
    build_stage1_example, build_stage2_example, masked_background, stage2_frames, CompositeExample, Stage2Source,
    ViewPairExample,
};
pub use fit::fit_object_in_mask;
pub use frames::{admissible_pair_count, sample_frame_pair, sample_frame_pair_with, VideoPairSpec, DEFAULT_TEMPORAL_WINDOW};
pub use lut::{apply_lut, Lut3D};
pub use mask::{coarsen_mask, MaskLevel};
pub use segment::segment_object;
pub use synthetic::{
    generate_synthetic_dataset, render_frame, render_view, Dataset, Manifest, ManifestRecord, RecordKind,
    SyntheticConfig, View,
};
