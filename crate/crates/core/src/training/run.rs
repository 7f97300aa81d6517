//! Epoch loops for both stages, metrics logging and per-epoch checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CompositeExample, ViewPairExample};
use crate::diffusion::{loss_comp, loss_id, Denoiser, LossOptions, LossOutput, NoiseSchedule};
use crate::encoder::{Encoder, BACKBONE_GROUP};
use crate::error::{Error, Result};
use crate::optim::clip_global_norm;
use crate::scalar::Scalar;
use crate::training::checkpoint::save_checkpoint;
use crate::training::plan::{lr_for, Component, Phase};
use crate::training::sources::ExampleSource;
use crate::training::state::{derive_seed, TrainState};

const ORDER_STREAM: u64 = 1;
const EXAMPLE_STREAM: u64 = 2;
const LOSS_STREAM: u64 = 3;

/// One metrics-log line.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    /// `None` in stage 1, which has no phases.
    pub phase: Option<Phase>,
    pub loss: f64,
    pub lr_adapter: f64,
    pub lr_unet: f64,
}

impl std::fmt::Display for StepRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let phase = self.phase.map_or("-".to_string(), |p| p.to_string());
        write!(
            f,
            "step={} epoch={} phase={} loss={:.6e} lr_adapter={:e} lr_unet={:e}",
            self.step, self.epoch, phase, self.loss, self.lr_adapter, self.lr_unet
        )
    }
}

impl FromStr for StepRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut rec = StepRecord {
            step: 0,
            epoch: 0,
            phase: None,
            loss: 0.0,
            lr_adapter: 0.0,
            lr_unet: 0.0,
        };
        let bad = |what: &str| Error::Parse(format!("metrics line `{line}`: bad {what}"));
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad("field"))?;
            match k {
                "step" => rec.step = v.parse().map_err(|_| bad(k))?,
                "epoch" => rec.epoch = v.parse().map_err(|_| bad(k))?,
                "phase" => {
                    rec.phase = match v {
                        "A" => Some(Phase::A),
                        "B" => Some(Phase::B),
                        "-" => None,
                        _ => return Err(bad(k)),
                    }
                }
                "loss" => rec.loss = v.parse().map_err(|_| bad(k))?,
                "lr_adapter" => rec.lr_adapter = v.parse().map_err(|_| bad(k))?,
                "lr_unet" => rec.lr_unet = v.parse().map_err(|_| bad(k))?,
                _ => return Err(bad(k)),
            }
            seen += 1;
        }
        if seen != 6 {
            return Err(bad("field count"));
        }
        Ok(rec)
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<StepRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Writes `epoch_NNN.ckpt` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics: Option<&'a mut dyn Write>,
    /// Stop once this many epochs are complete (for interrupted runs).
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

type LossFn<T, E> = fn(&[E], &Denoiser<T>, &Encoder<T>, &NoiseSchedule, LossOptions) -> Result<LossOutput<T>>;

fn train_loop<T: Scalar, E, S: ExampleSource<E>>(
    state: &mut TrainState<T>,
    data: &S,
    opts: &mut RunOptions<'_>,
    loss: LossFn<T, E>,
) -> Result<RunSummary> {
    if data.is_empty() {
        return Err(Error::Dataset("no training examples".into()));
    }
    let plan = state.plan.clone();
    let mut summary = RunSummary::default();
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while state.epoch < plan.epochs {
        let epoch = state.epoch;
        let lr_backbone = lr_for(Component::Backbone, epoch, &plan)?;
        let lr_adapter = lr_for(Component::Adapter, epoch, &plan)?;
        let lr_unet = lr_for(Component::Unet, epoch, &plan)?;
        let phase = (plan.stage == 2).then(|| Phase::at(epoch, &plan));

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[ORDER_STREAM, epoch as u64])));
        for chunk in order.chunks(plan.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| data.example(i, derive_seed(plan.seed, &[EXAMPLE_STREAM, epoch as u64, i as u64])))
                .collect::<Result<Vec<E>>>()?;
            let lopts = LossOptions::new(plan.drop_prob, derive_seed(plan.seed, &[LOSS_STREAM, state.step]));
            let mut out = loss(&batch, &state.denoiser, &state.encoder, &state.schedule, lopts)?;
            if !out.loss.f64().is_finite() {
                return Err(Error::Numerical(format!("loss became {} at step {}", out.loss, state.step)));
            }
            clip_global_norm(&mut out.grads, plan.grad_clip);
            state.opt_encoder.update(state.encoder.params_mut(), &out.grads, |e| {
                if e.group == BACKBONE_GROUP {
                    lr_backbone
                } else {
                    lr_adapter
                }
            });
            state.opt_denoiser.update(state.denoiser.params_mut(), &out.grads, |_| lr_unet);

            let rec = StepRecord {
                step: state.step,
                epoch,
                phase,
                loss: out.loss.f64(),
                lr_adapter,
                lr_unet,
            };
            if let Some(w) = opts.metrics.as_deref_mut() {
                writeln!(w, "{rec}").map_err(|e| Error::io("metrics log", e))?;
            }
            summary.records.push(rec);
            state.step += 1;
        }
        state.epoch += 1;
        if let Some(dir) = &opts.checkpoint_dir {
            let path = checkpoint_path(dir, state.epoch);
            save_checkpoint(state, &path)?;
            summary.checkpoints.push(path);
        }
        if opts.stop_after_epoch == Some(state.epoch) {
            break;
        }
    }
    Ok(summary)
}

/// Stage 1: identity pretraining on view pairs.
pub fn run_stage1<T: Scalar, S: ExampleSource<ViewPairExample<T>>>(
    state: &mut TrainState<T>,
    data: &S,
    opts: &mut RunOptions<'_>,
) -> Result<RunSummary> {
    if state.plan.stage != 1 {
        return Err(Error::Config("stage-1 run needs a stage-1 plan".into()));
    }
    train_loop(state, data, opts, loss_id::<T, Denoiser<T>>)
}

/// Stage 2: compositing with the backbone frozen and swapped rates.
pub fn run_stage2<T: Scalar, S: ExampleSource<CompositeExample<T>>>(
    state: &mut TrainState<T>,
    data: &S,
    opts: &mut RunOptions<'_>,
) -> Result<RunSummary> {
    if state.plan.stage != 2 {
        return Err(Error::Config("stage-2 run needs a stage-2 plan".into()));
    }
    train_loop(state, data, opts, loss_comp::<T, Denoiser<T>>)
}
