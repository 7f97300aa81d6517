//! Trainer state: both models, their optimizers and the position in the
//! plan.

use crate::diffusion::{make_schedule, Denoiser, DenoiserConfig, NoiseSchedule};
use crate::encoder::{Encoder, EncoderConfig, EncoderPart};
use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::scalar::Scalar;
use crate::training::plan::{ExperimentConfig, TrainPlan};

/// SplitMix64-style mixing of a seed with a path of integers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const ENCODER_INIT: u64 = 101;
const DENOISER_INIT: u64 = 102;

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub plan: TrainPlan,
    pub schedule: NoiseSchedule,
    pub encoder: Encoder<T>,
    pub denoiser: Denoiser<T>,
    pub opt_encoder: AdamW<T>,
    pub opt_denoiser: AdamW<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh models initialized from `plan.seed`.
    pub fn new(plan: TrainPlan, encoder: EncoderConfig, denoiser: DenoiserConfig, timesteps: usize) -> Result<Self> {
        plan.validate()?;
        let enc = Encoder::new(encoder, derive_seed(plan.seed, &[ENCODER_INIT]))?;
        let den = Denoiser::new(denoiser, derive_seed(plan.seed, &[DENOISER_INIT]))?;
        Self::from_models(plan, enc, den, timesteps)
    }

    /// Wraps existing models with fresh optimizers and applies the plan's
    /// freeze flags.
    pub fn from_models(plan: TrainPlan, encoder: Encoder<T>, denoiser: Denoiser<T>, timesteps: usize) -> Result<Self> {
        plan.validate()?;
        if encoder.config().cond_dim != denoiser.config().cond_dim {
            return Err(Error::Config("encoder and denoiser cond dims differ".into()));
        }
        let schedule = make_schedule(timesteps)?;
        let mut state = TrainState {
            opt_encoder: AdamW::new(plan.optimizer, encoder.params()),
            opt_denoiser: AdamW::new(plan.optimizer, denoiser.params()),
            plan,
            schedule,
            encoder,
            denoiser,
            epoch: 0,
            step: 0,
        };
        state.apply_freeze();
        Ok(state)
    }

    pub fn stage1(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.plan.stage != 1 {
            return Err(Error::Config("stage-1 run needs a stage-1 plan".into()));
        }
        Self::new(cfg.plan.clone(), cfg.encoder.clone(), cfg.denoiser.clone(), cfg.timesteps)
    }

    /// Stage-2 state from a stage-1 result. The encoder is copied; the
    /// denoiser starts fresh unless the plan asks for a warm start.
    pub fn stage2(cfg: &ExperimentConfig, stage1: Option<&TrainState<T>>) -> Result<Self> {
        cfg.validate()?;
        if cfg.plan.stage != 2 {
            return Err(Error::Config("stage-2 run needs a stage-2 plan".into()));
        }
        let stage1 = stage1.ok_or_else(|| Error::Config("stage 2 needs a stage-1 encoder checkpoint".into()))?;
        if stage1.encoder.config() != &cfg.encoder {
            return Err(Error::Config("encoder config differs from the stage-1 checkpoint".into()));
        }
        let denoiser = if cfg.plan.warm_start_denoiser {
            if stage1.denoiser.config() != &cfg.denoiser {
                return Err(Error::Config("denoiser config differs from the stage-1 checkpoint".into()));
            }
            stage1.denoiser.clone()
        } else {
            Denoiser::new(cfg.denoiser.clone(), derive_seed(cfg.plan.seed, &[DENOISER_INIT]))?
        };
        Self::from_models(cfg.plan.clone(), stage1.encoder.clone(), denoiser, cfg.timesteps)
    }

    pub fn apply_freeze(&mut self) {
        let f = self.plan.freeze;
        self.encoder.set_trainable(EncoderPart::Backbone, !f.backbone);
        self.encoder.set_trainable(EncoderPart::Adapter, !f.adapter);
        self.denoiser.params_mut().set_all_trainable(true);
        self.denoiser.set_encoder_trainable(!f.unet_encoder);
    }
}
