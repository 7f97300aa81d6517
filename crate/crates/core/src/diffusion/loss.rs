//! Noise-prediction training losses for both stages.
//!
//! Each example gets its own graph and its own random draws, derived from
//! `(seed, example index)`, so the batch result does not depend on the
//! order in which examples are evaluated. Gradients are summed in index
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CompositeExample, ViewPairExample};
use crate::diffusion::schedule::{q_sample, NoiseSchedule};
use crate::diffusion::unet::{assemble_denoiser_input, SpatialContext};
use crate::diffusion::NoisePredictor;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::image::{ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Random quantities used for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleDraw<T> {
    pub drop: bool,
    pub t: usize,
    pub eps: Tensor<T>,
}

/// Draws `(dropout flag, timestep, noise)` for example `index`.
pub fn draw_noise<T: Scalar>(seed: u64, index: usize, timesteps: usize, shape: &[usize], drop_prob: f64) -> ExampleDraw<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let drop = rng.random::<f64>() < drop_prob;
    let t = rng.random_range(0..timesteps);
    let eps = Tensor::randn(shape, 1.0, &mut rng);
    ExampleDraw { drop, t, eps }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub drop_prob: f64,
    pub seed: u64,
    /// Skip the backward pass when false (validation).
    pub with_grads: bool,
}

impl LossOptions {
    pub fn new(drop_prob: f64, seed: u64) -> Self {
        LossOptions {
            drop_prob,
            seed,
            with_grads: true,
        }
    }

    /// Seed taken from `rng`.
    pub fn from_rng<R: Rng + ?Sized>(drop_prob: f64, rng: &mut R) -> Self {
        Self::new(drop_prob, rng.random())
    }

    pub fn eval(seed: u64) -> Self {
        LossOptions {
            drop_prob: 0.0,
            seed,
            with_grads: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    /// Examples that were conditioned on the null tokens.
    pub nulls: usize,
}

struct Item<'a, T> {
    object: &'a ImageBuffer<T>,
    target: &'a ImageBuffer<T>,
    ctx: SpatialContext<T>,
    weight: Option<&'a MaskBuffer<T>>,
}

fn cond_var<T: Scalar>(g: &mut Graph<T>, encoder: &Encoder<T>, object: &ImageBuffer<T>, drop: bool) -> Result<Var> {
    if drop {
        return Ok(encoder.null_tokens_graph(g));
    }
    let n = encoder.config().image_size;
    if object.height() == n && object.width() == n {
        encoder.tokens_graph(g, object)
    } else {
        encoder.tokens_graph(g, &object.resize(n, n))
    }
}

fn run_batch<'a, T: Scalar, M: NoisePredictor<T>>(
    items: Vec<Item<'a, T>>,
    model: &M,
    encoder: &Encoder<T>,
    schedule: &NoiseSchedule,
    opts: LossOptions,
) -> Result<LossOutput<T>> {
    if items.is_empty() {
        return Err(Error::Argument("loss needs a nonempty batch".into()));
    }
    if !(0.0..=1.0).contains(&opts.drop_prob) {
        return Err(Error::Argument(format!("drop probability {} outside [0, 1]", opts.drop_prob)));
    }
    let n = model.image_size();
    let numel = 3 * n * n;
    let denom = T::c((items.len() * numel) as f64);
    let mut loss = T::zero();
    let mut grads = Gradients::default();
    let mut nulls = 0;
    for (i, item) in items.into_iter().enumerate() {
        item.target.same_size(n, n, "training target")?;
        let draw: ExampleDraw<T> = draw_noise(opts.seed, i, schedule.len(), &[3, n, n], opts.drop_prob);
        nulls += draw.drop as usize;
        let x0 = item.target.to_signed_chw();
        let x_t = q_sample(&x0, draw.t, &draw.eps, schedule)?;
        let input = assemble_denoiser_input(&x_t, &item.ctx, model.variant())?;

        let mut g = Graph::new();
        let cond = cond_var(&mut g, encoder, item.object, draw.drop)?;
        let x = g.constant(input.main);
        let hint = input.hint.map(|h| g.constant(h));
        let pred = model.predict_graph(&mut g, x, hint, draw.t, cond)?;
        let weight = item.weight.map(|m| {
            let hw = n * n;
            let md = m.data();
            Tensor::from_vec(&[3, n, n], (0..numel).map(|k| md[k % hw]).collect()).expect("sized")
        });
        let l = g.weighted_sq_err(pred, draw.eps, weight, denom)?;
        loss += g.value(l).data()[0];
        if opts.with_grads {
            grads.merge(g.backward(l));
        }
    }
    Ok(LossOutput { loss, grads, nulls })
}

/// Identity loss: reconstruct the target view's noise conditioned on the
/// source view, with no background (all-ones mask).
pub fn loss_id<T: Scalar, M: NoisePredictor<T>>(
    batch: &[ViewPairExample<T>],
    model: &M,
    encoder: &Encoder<T>,
    schedule: &NoiseSchedule,
    opts: LossOptions,
) -> Result<LossOutput<T>> {
    let n = model.image_size();
    let needs_obj = model.variant().needs_inserted_object();
    let items = batch
        .iter()
        .map(|ex| {
            let inserted = needs_obj.then(|| ex.source_view.resize(n, n));
            Ok(Item {
                object: &ex.source_view,
                target: &ex.target_view,
                ctx: SpatialContext::unmasked(n, inserted.as_ref())?,
                weight: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_batch(items, model, encoder, schedule, opts)
}

/// Compositing loss: squared noise error weighted per pixel by the mask.
pub fn loss_comp<T: Scalar, M: NoisePredictor<T>>(
    batch: &[CompositeExample<T>],
    model: &M,
    encoder: &Encoder<T>,
    schedule: &NoiseSchedule,
    opts: LossOptions,
) -> Result<LossOutput<T>> {
    let items = batch
        .iter()
        .map(|ex| {
            Ok(Item {
                object: &ex.object_image,
                target: &ex.target,
                ctx: SpatialContext::for_composite(
                    &ex.background,
                    &ex.mask,
                    &ex.object_image,
                    &ex.object_mask,
                    model.variant(),
                )?,
                weight: Some(&ex.mask),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_batch(items, model, encoder, schedule, opts)
}
