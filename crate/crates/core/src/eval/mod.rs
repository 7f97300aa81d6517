//! Metrics: object-centred crops, embedding similarity, Fréchet distance
//! and clustering quality.

pub mod cluster;
pub mod crop;
pub mod features;
pub mod fid;
pub mod linalg;
pub mod report;

pub use cluster::{clustering_quality, projection_to_text, silhouette, tsne_2d, ClusteringResult, ProjectedPoint, TsneOptions};
pub use crop::{crop_rect, crop_to_object, CROP_MARGIN};
pub use features::{cosine_score, feature_stats, similarity_score, Embedder, RandomConvFeatures};
pub use fid::{fid, FeatureStats, PSD_TOLERANCE};
pub use report::{evaluate_run, Compositor, EvalReport, EvalRow, ModelCompositor};
