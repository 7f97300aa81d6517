//! Two-stage training: plans, the epoch loops, checkpoints and metrics.

pub mod checkpoint;
pub mod plan;
pub mod run;
pub mod sources;
pub mod state;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, file_sha256, load_checkpoint, save_checkpoint, sha256_hex};
pub use plan::{lr_for, Component, DataConfig, ExperimentConfig, FreezeFlags, Phase, TrainPlan};
pub use run::{checkpoint_path, parse_metrics, run_stage1, run_stage2, RunOptions, RunSummary, StepRecord};
pub use sources::{ExampleSource, FixedExamples, ScenePairs, ViewPairs};
pub use state::{derive_seed, TrainState};
