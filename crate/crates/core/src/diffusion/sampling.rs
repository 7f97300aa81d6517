//! Guided DDIM sampling with per-step background blending.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::schedule::{q_sample_at, NoiseSchedule};
use crate::diffusion::unet::{assemble_denoiser_input, SpatialContext};
use crate::diffusion::NoisePredictor;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::{ImageBuffer, MaskBuffer};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_CFG_SCALE: f64 = 3.0;
pub const X0_CLAMP: (f64, f64) = (-1.0, 2.0);

/// `uncond + scale * (cond - uncond)`.
pub fn cfg_combine<T: Scalar>(eps_cond: &Tensor<T>, eps_uncond: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
    // Mixed form so that `scale = 1` and `cond = uncond` are exact.
    let s = T::c(scale);
    let r = T::one() - s;
    eps_cond.zip_map(eps_uncond, |c, u| if c == u { c } else { r * u + s * c })
}

/// Evenly spaced timesteps `T*(steps-1)/steps, ..., T/steps, 0`, descending.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::Argument(format!(
            "steps must be in 1..={timesteps}, got {steps}"
        )));
    }
    Ok((0..steps).map(|i| i * timesteps / steps).rev().collect())
}

fn alpha_bar_or_clean(schedule: &NoiseSchedule, t: Option<usize>) -> Result<f64> {
    match t {
        Some(t) => schedule.alpha_bar(t),
        None => Ok(1.0),
    }
}

/// Clean-image estimate `(x_t - sqrt(1 - ab) * eps) / sqrt(ab)`.
pub fn predict_x0<T: Scalar>(x_t: &Tensor<T>, eps_hat: &Tensor<T>, alpha_bar: f64) -> Result<Tensor<T>> {
    let a = T::c(alpha_bar.sqrt());
    let b = T::c((1.0 - alpha_bar).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - b * e) / a)
}

/// Deterministic DDIM update from `t` to `t_prev` (`None` is the clean
/// endpoint). With `clamp`, the clean estimate is limited to [`X0_CLAMP`].
pub fn ddim_step<T: Scalar>(
    x_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    t_prev: Option<usize>,
    schedule: &NoiseSchedule,
    clamp: bool,
) -> Result<Tensor<T>> {
    if let Some(tp) = t_prev {
        if tp >= t {
            return Err(Error::Ordering { t, t_prev: tp });
        }
    }
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = alpha_bar_or_clean(schedule, t_prev)?;
    let mut x0 = predict_x0(x_t, eps_hat, ab)?;
    if clamp {
        let (lo, hi) = (T::c(X0_CLAMP.0), T::c(X0_CLAMP.1));
        x0 = x0.map(|v| v.max(lo).min(hi));
    }
    q_sample_at(&x0, ab_prev, eps_hat)
}

/// `mask * x + (1 - mask) * noised(background)`, with the background noised
/// to `t` (`None` uses the clean background). `mask` is `[1, h, w]` and is
/// broadcast over channels.
pub fn blend_background<T: Scalar>(
    x: &Tensor<T>,
    background: &Tensor<T>,
    mask: &Tensor<T>,
    t: Option<usize>,
    eps_bg: &Tensor<T>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<T>> {
    x.check_same(background)?;
    let hw = x.shape()[1] * x.shape()[2];
    if mask.numel() != hw {
        return Err(Error::Dimension(format!(
            "mask {:?} against image {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    let bg = match t {
        Some(t) => q_sample_at(background, schedule.alpha_bar(t)?, eps_bg)?,
        None => background.clone(),
    };
    let m = mask.data();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let mi = m[i % hw];
        *v = mi * *v + (T::one() - mi) * bg.data()[i];
    }
    Ok(out)
}

/// A compositing request in `[0, 1]` image space.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest<T> {
    pub background: ImageBuffer<T>,
    pub mask: MaskBuffer<T>,
    pub object_image: ImageBuffer<T>,
    /// Support of `object_image`; when absent, every non-black pixel.
    pub object_mask: Option<MaskBuffer<T>>,
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
    pub clamp_x0: bool,
}

impl<T: Scalar> SampleRequest<T> {
    pub fn new(background: ImageBuffer<T>, mask: MaskBuffer<T>, object_image: ImageBuffer<T>) -> Self {
        SampleRequest {
            background,
            mask,
            object_image,
            object_mask: None,
            steps: DEFAULT_STEPS,
            cfg_scale: DEFAULT_CFG_SCALE,
            seed: 0,
            clamp_x0: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Argument("steps must be at least 1".into()));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(Error::Range(format!("cfg scale {} must be finite and >= 0", self.cfg_scale)));
        }
        self.mask
            .same_size(self.background.height(), self.background.width(), "mask")?;
        if let Some(om) = &self.object_mask {
            om.same_size(self.object_image.height(), self.object_image.width(), "object mask")?;
        }
        Ok(())
    }

    fn resolved_object_mask(&self) -> Result<MaskBuffer<T>> {
        match &self.object_mask {
            Some(m) => Ok(m.binarized()),
            None => {
                let img = &self.object_image;
                MaskBuffer::from_fn(img.height(), img.width(), |r, c| {
                    img.pixel(r, c).iter().any(|&v| v > T::zero())
                })
            }
        }
    }
}

/// Runs guided DDIM from seeded noise, blending the background back in
/// after every step, and returns the composite. Pixels where the mask is 0
/// equal the input background exactly.
pub fn sample_composite<T: Scalar, M: NoisePredictor<T>>(
    request: &SampleRequest<T>,
    model: &M,
    encoder: &Encoder<T>,
    schedule: &NoiseSchedule,
) -> Result<ImageBuffer<T>> {
    request.validate()?;
    let n = model.image_size();
    request.background.same_size(n, n, "background")?;
    if request.mask.is_empty() {
        return Ok(request.background.clone());
    }
    let object_mask = request.resolved_object_mask()?;
    if object_mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let ctx = SpatialContext::for_composite(
        &request.background,
        &request.mask,
        &request.object_image,
        &object_mask,
        model.variant(),
    )?;

    let es = encoder.config().image_size;
    let obj = request.object_image.resize(es, es);
    let cond = encoder.adapt(&encoder.encode_tokens(&obj)?)?.tokens;
    let null = encoder.null_tokens().tokens;

    let clean_bg = request.background.to_signed_chw();
    let mask = request.mask.to_tensor();
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let shape = clean_bg.shape().to_vec();
    let ts = ddim_timesteps(schedule.len(), request.steps)?;

    let mut x = Tensor::randn(&shape, 1.0, &mut rng);
    let eps_bg = Tensor::randn(&shape, 1.0, &mut rng);
    x = blend_background(&x, &clean_bg, &mask, Some(ts[0]), &eps_bg, schedule)?;

    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied();
        let input = assemble_denoiser_input(&x, &ctx, model.variant())?;
        let scale = request.cfg_scale;
        let eps = if scale == 1.0 {
            predict(model, &input, t, &cond)?
        } else if scale == 0.0 {
            predict(model, &input, t, &null)?
        } else {
            let c = predict(model, &input, t, &cond)?;
            let u = predict(model, &input, t, &null)?;
            cfg_combine(&c, &u, scale)?
        };
        x = ddim_step(&x, &eps, t, t_prev, schedule, request.clamp_x0)?;
        let eps_bg = Tensor::randn(&shape, 1.0, &mut rng);
        x = blend_background(&x, &clean_bg, &mask, t_prev, &eps_bg, schedule)?;
    }

    let generated = ImageBuffer::from_signed_chw(&x)?;
    composite_over(&generated, &request.background, &request.mask)
}

fn predict<T: Scalar, M: NoisePredictor<T>>(
    model: &M,
    input: &crate::diffusion::unet::DenoiserInput<T>,
    t: usize,
    cond: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.main.clone());
    let hint = input.hint.clone().map(|h| g.constant(h));
    let c = g.constant(cond.clone());
    let out = model.predict_graph(&mut g, x, hint, t, c)?;
    Ok(g.value(out).clone())
}

/// `mask * generated + (1 - mask) * background` in `[0, 1]` space.
pub fn composite_over<T: Scalar>(
    generated: &ImageBuffer<T>,
    background: &ImageBuffer<T>,
    mask: &MaskBuffer<T>,
) -> Result<ImageBuffer<T>> {
    let (h, w) = (background.height(), background.width());
    generated.same_size(h, w, "generated image")?;
    mask.same_size(h, w, "mask")?;
    let mut out = background.clone();
    for r in 0..h {
        for c in 0..w {
            let m = mask.get(r, c);
            if m == T::zero() {
                continue;
            }
            let gp = generated.pixel(r, c);
            let bp = background.pixel(r, c);
            out.set_pixel(r, c, [0, 1, 2].map(|k| m * gp[k] + (T::one() - m) * bp[k]));
        }
    }
    Ok(out)
}
