//! Training plans, learning-rate schedule and experiment configs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticConfig, DEFAULT_TEMPORAL_WINDOW};
use crate::diffusion::{DenoiserConfig, DEFAULT_TIMESTEPS};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;

pub const LR_HIGH: f64 = 4e-5;
pub const LR_LOW: f64 = 4e-6;
pub const STAGE1_DROP_PROB: f64 = 0.05;
pub const STAGE2_DROP_PROB: f64 = 0.1;
pub const STAGE1_EPOCHS: usize = 5;
pub const STAGE2_EPOCHS: usize = 15;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const GRAD_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeFlags {
    pub backbone: bool,
    pub adapter: bool,
    /// Downsampling half of the UNet.
    pub unet_encoder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub stage: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_adapter: f64,
    pub lr_unet: f64,
    /// Rate for the encoder backbone when it trains.
    pub lr_encoder: f64,
    /// First epoch of phase B; `None` means `epochs / 2`.
    pub swap_epoch: Option<usize>,
    pub drop_prob: f64,
    pub temporal_window: usize,
    /// Share of stage-2 examples drawn from a neighbouring frame rather
    /// than an augmented copy of the target frame.
    pub video_fraction: f64,
    pub freeze: FreezeFlags,
    /// Stage 2 only: start the denoiser from the stage-1 checkpoint.
    pub warm_start_denoiser: bool,
    pub optimizer: AdamWConfig,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan::stage2()
    }
}

impl TrainPlan {
    pub fn stage1() -> Self {
        TrainPlan {
            stage: 1,
            epochs: STAGE1_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr_adapter: LR_HIGH,
            lr_unet: LR_HIGH,
            lr_encoder: LR_LOW,
            swap_epoch: None,
            drop_prob: STAGE1_DROP_PROB,
            temporal_window: DEFAULT_TEMPORAL_WINDOW,
            video_fraction: 0.5,
            freeze: FreezeFlags::default(),
            warm_start_denoiser: false,
            optimizer: AdamWConfig::default(),
            grad_clip: GRAD_CLIP_NORM,
            seed: 0,
        }
    }

    pub fn stage2() -> Self {
        TrainPlan {
            stage: 2,
            epochs: STAGE2_EPOCHS,
            lr_adapter: LR_HIGH,
            lr_unet: LR_LOW,
            drop_prob: STAGE2_DROP_PROB,
            freeze: FreezeFlags {
                backbone: true,
                ..FreezeFlags::default()
            },
            ..TrainPlan::stage1()
        }
    }

    pub fn swap_epoch(&self) -> usize {
        self.swap_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        for (name, v) in [
            ("lr_adapter", self.lr_adapter),
            ("lr_unet", self.lr_unet),
            ("lr_encoder", self.lr_encoder),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.swap_epoch() > self.epochs {
            return Err(Error::Config(format!(
                "swap epoch {} exceeds epochs {}",
                self.swap_epoch(),
                self.epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) || !(0.0..=1.0).contains(&self.video_fraction) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.temporal_window == 0 {
            return Err(Error::Config("temporal window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Backbone,
    Adapter,
    Unet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
}

impl Phase {
    pub fn at(epoch: usize, plan: &TrainPlan) -> Self {
        if epoch < plan.swap_epoch() {
            Phase::A
        } else {
            Phase::B
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::A => "A",
            Phase::B => "B",
        })
    }
}

/// Learning rate of `component` during `epoch`. In stage 2 the adapter and
/// UNet rates trade places from `swap_epoch` on; stage 1 uses fixed rates.
pub fn lr_for(component: Component, epoch: usize, plan: &TrainPlan) -> Result<f64> {
    if epoch >= plan.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside plan of {} epochs",
            plan.epochs
        )));
    }
    let swapped = plan.stage == 2 && Phase::at(epoch, plan) == Phase::B;
    Ok(match (component, swapped) {
        (Component::Backbone, _) => plan.lr_encoder,
        (Component::Adapter, false) | (Component::Unet, true) => plan.lr_adapter,
        (Component::Unet, false) | (Component::Adapter, true) => plan.lr_unet,
    })
}

/// Where training examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct DataConfig {
    /// Dataset directory with `manifest.jsonl`; synthesized in memory when
    /// absent.
    pub dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}


/// Everything a training run needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub plan: TrainPlan,
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
    pub timesteps: usize,
    pub data: DataConfig,
    /// Checkpoints, metrics and the resolved config are written here.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plan: TrainPlan::default(),
            encoder: EncoderConfig::default(),
            denoiser: DenoiserConfig::default(),
            timesteps: DEFAULT_TIMESTEPS,
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.encoder.validate()?;
        self.denoiser.validate()?;
        if self.encoder.cond_dim != self.denoiser.cond_dim {
            return Err(Error::Config(format!(
                "encoder cond dim {} differs from denoiser cond dim {}",
                self.encoder.cond_dim, self.denoiser.cond_dim
            )));
        }
        if self.timesteps < 2 {
            return Err(Error::Config("timesteps must be at least 2".into()));
        }
        Ok(())
    }

    /// Parses a possibly partial config. Missing keys take the defaults
    /// of the stage named in `[plan]` (stage 2 when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let parse_err = |e: &dyn std::fmt::Display| Error::Parse(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| parse_err(&e))?;
        let stage = user
            .get("plan")
            .and_then(|p| p.get("stage"))
            .and_then(|s| s.as_integer())
            .unwrap_or(2);
        let base = ExperimentConfig {
            plan: if stage == 1 { TrainPlan::stage1() } else { TrainPlan::stage2() },
            ..ExperimentConfig::default()
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| parse_err(&e))?;
        merge_tables(&mut merged, user);
        let cfg: ExperimentConfig = toml::Value::Table(merged).try_into().map_err(|e| parse_err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::image::write_file(path.as_ref(), self.to_toml()?.as_bytes())
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
