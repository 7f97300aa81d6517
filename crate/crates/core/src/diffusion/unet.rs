//! Conditional UNet noise predictor with cross-attention to object tokens
//! and two alternative ways of feeding the inserted object spatially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::fit_object_in_mask;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{ImageBuffer, MaskBuffer};
use crate::nn::{Attention, Conv2d, GroupNorm, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const DENOISER_STORE_TAG: u32 = 2;

pub const ENC_GROUP: &str = "unet.enc";
pub const MID_GROUP: &str = "unet.mid";
pub const DEC_GROUP: &str = "unet.dec";
pub const CTRL_GROUP: &str = "unet.ctrl";

/// Noisy image (3) + masked background (3) + mask (1).
pub const BASE_INPUT_CHANNELS: usize = 7;
/// Inserted object (3) + inverted mask (1) for the side branch.
pub const HINT_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CrossAttention,
    Concat,
    ControlNet,
}

impl Variant {
    pub fn in_channels(self) -> usize {
        match self {
            Variant::Concat => BASE_INPUT_CHANNELS + 3,
            _ => BASE_INPUT_CHANNELS,
        }
    }

    pub fn needs_inserted_object(self) -> bool {
        self != Variant::CrossAttention
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_attention" => Ok(Variant::CrossAttention),
            "concat" => Ok(Variant::Concat),
            "controlnet" => Ok(Variant::ControlNet),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attn_resolutions: Vec<usize>,
    pub cond_dim: usize,
    pub in_channels: usize,
    pub variant: Variant,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_size: 64,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            attn_resolutions: vec![16, 8],
            cond_dim: 128,
            in_channels: BASE_INPUT_CHANNELS,
            variant: Variant::CrossAttention,
        }
    }
}

impl DenoiserConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.in_channels = variant.in_channels();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != self.variant.in_channels() {
            return Err(Error::Config(format!(
                "{:?} variant takes {} input channels, config says {}",
                self.variant,
                self.variant.in_channels(),
                self.in_channels
            )));
        }
        let levels = self.channel_multipliers.len();
        if levels == 0 || self.channel_multipliers.contains(&0) {
            return Err(Error::Config("channel multipliers must be nonempty and positive".into()));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return Err(Error::Config("base channels must be even and positive".into()));
        }
        if !self.image_size.is_multiple_of(1 << levels) {
            return Err(Error::Config(format!(
                "image size {} not divisible by 2^{levels}",
                self.image_size
            )));
        }
        if self.cond_dim == 0 {
            return Err(Error::Config("cond dim must be positive".into()));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    fn resolution(&self, level: usize) -> usize {
        self.image_size >> level
    }

    fn mid_resolution(&self) -> usize {
        self.image_size >> self.channel_multipliers.len()
    }

    fn temb_dim(&self) -> usize {
        4 * self.base_channels
    }
}

/// Spatial inputs shared by every denoising step, in `[-1, 1]` channel-first
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialContext<T> {
    /// Background with the masked region zeroed, `[3, h, w]`.
    pub background: Tensor<T>,
    /// `[1, h, w]`.
    pub mask: Tensor<T>,
    /// Object pasted into the mask region, `[3, h, w]`.
    pub inserted: Option<Tensor<T>>,
}

impl<T: Scalar> SpatialContext<T> {
    /// Builds the context from a clean background and mask. The background
    /// is multiplied by `1 - mask` after mapping to `[-1, 1]`.
    pub fn new(background: &ImageBuffer<T>, mask: &MaskBuffer<T>, inserted: Option<&ImageBuffer<T>>) -> Result<Self> {
        mask.same_size(background.height(), background.width(), "mask")?;
        let m = mask.to_tensor();
        let hw = mask.height() * mask.width();
        let mut bg = background.to_signed_chw();
        for (i, v) in bg.data_mut().iter_mut().enumerate() {
            *v *= T::one() - m.data()[i % hw];
        }
        let inserted = match inserted {
            Some(img) => {
                img.same_size(background.height(), background.width(), "inserted object")?;
                Some(img.to_signed_chw())
            }
            None => None,
        };
        Ok(SpatialContext {
            background: bg,
            mask: m,
            inserted,
        })
    }

    /// Context with no background and an all-ones mask.
    pub fn unmasked(size: usize, inserted: Option<&ImageBuffer<T>>) -> Result<Self> {
        let bg = ImageBuffer::zeros(size, size)?;
        let mask = MaskBuffer::filled(size, size, T::one())?;
        Self::new(&bg, &mask, inserted)
    }

    /// Context for a compositing request: the inserted object is the
    /// object fitted into the mask's bounding box over a black canvas.
    pub fn for_composite(
        background: &ImageBuffer<T>,
        mask: &MaskBuffer<T>,
        object_image: &ImageBuffer<T>,
        object_mask: &MaskBuffer<T>,
        variant: Variant,
    ) -> Result<Self> {
        let inserted = if variant.needs_inserted_object() {
            let black = ImageBuffer::zeros(background.height(), background.width())?;
            Some(fit_object_in_mask(object_image, object_mask, &black, mask)?)
        } else {
            None
        };
        Self::new(background, mask, inserted.as_ref())
    }
}

/// Main UNet input plus the optional side-branch hint.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput<T> {
    pub main: Tensor<T>,
    pub hint: Option<Tensor<T>>,
}

/// Stacks `x_t` with the spatial context according to `variant`.
pub fn assemble_denoiser_input<T: Scalar>(
    x_t: &Tensor<T>,
    ctx: &SpatialContext<T>,
    variant: Variant,
) -> Result<DenoiserInput<T>> {
    x_t.check_same(&ctx.background)?;
    let mut main = Vec::with_capacity(x_t.numel() * 10 / 3);
    main.extend_from_slice(x_t.data());
    main.extend_from_slice(ctx.background.data());
    main.extend_from_slice(ctx.mask.data());
    let (h, w) = (x_t.shape()[1], x_t.shape()[2]);
    let inserted = || {
        ctx.inserted
            .as_ref()
            .ok_or_else(|| Error::Argument(format!("{variant:?} variant needs the inserted object")))
    };
    let hint = match variant {
        Variant::CrossAttention => None,
        Variant::Concat => {
            main.extend_from_slice(inserted()?.data());
            None
        }
        Variant::ControlNet => {
            let obj = inserted()?;
            let mut hint = obj.data().to_vec();
            hint.extend(ctx.mask.data().iter().map(|&m| T::one() - m));
            Some(Tensor::from_vec(&[HINT_CHANNELS, h, w], hint)?)
        }
    };
    let c = main.len() / (h * w);
    Ok(DenoiserInput {
        main: Tensor::from_vec(&[c, h, w], main)?,
        hint,
    })
}

/// Sinusoidal features of an integer timestep, `[1, dim]`.
pub fn timestep_features<T: Scalar>(t: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = T::c(a.sin());
        out[half + i] = T::c(a.cos());
    }
    Tensor::from_vec(&[1, dim], out).expect("sized")
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        s: &mut ParamStore<T>,
        name: &str,
        group: &str,
        c_in: usize,
        c_out: usize,
        temb_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ResBlock {
            norm1: GroupNorm::new(s, &format!("{name}.norm1"), group, c_in),
            conv1: Conv2d::new(s, &format!("{name}.conv1"), group, c_in, c_out, 3, 1, rng),
            temb: Linear::new(s, &format!("{name}.temb"), group, temb_dim, c_out, rng),
            norm2: GroupNorm::new(s, &format!("{name}.norm2"), group, c_out),
            conv2: Conv2d::new(s, &format!("{name}.conv2"), group, c_out, c_out, 3, 1, rng),
            skip: (c_in != c_out).then(|| Conv2d::new(s, &format!("{name}.skip"), group, c_in, c_out, 1, 1, rng)),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, temb: Var) -> Result<Var> {
        let h = self.norm1.forward(g, s, x)?;
        let h = g.silu(h);
        let h = self.conv1.forward(g, s, h)?;
        let te = self.temb.forward(g, s, temb)?;
        let c = self.temb.d_out;
        let te = g.reshape(te, &[c])?;
        let h = g.add_chan(h, te)?;
        let h = self.norm2.forward(g, s, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, s, h)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(g, s, x)?,
            None => x,
        };
        g.add(skip, h)
    }
}

/// Self-attention, cross-attention to the conditioning tokens, then an MLP,
/// each pre-normed and residual, over the pixels of a feature map.
#[derive(Debug, Clone)]
struct AttnBlock {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl AttnBlock {
    fn new<T: Scalar>(s: &mut ParamStore<T>, name: &str, group: &str, c: usize, cond_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let heads = (c / 32).max(1);
        AttnBlock {
            ln1: LayerNorm::new(s, &format!("{name}.ln1"), group, c),
            self_attn: Attention::new(s, &format!("{name}.self"), group, c, c, heads, rng),
            ln2: LayerNorm::new(s, &format!("{name}.ln2"), group, c),
            cross_attn: Attention::new(s, &format!("{name}.cross"), group, c, cond_dim, heads, rng),
            ln3: LayerNorm::new(s, &format!("{name}.ln3"), group, c),
            fc1: Linear::new(s, &format!("{name}.fc1"), group, c, 2 * c, rng),
            fc2: Linear::new(s, &format!("{name}.fc2"), group, 2 * c, c, rng),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var, cond: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let flat = g.reshape(x, &[c, hw])?;
        let tok = g.transpose(flat);

        let h = self.ln1.forward(g, s, tok)?;
        let h = self.self_attn.forward(g, s, h, h)?;
        let tok = g.add(tok, h)?;
        let h = self.ln2.forward(g, s, tok)?;
        let h = self.cross_attn.forward(g, s, h, cond)?;
        let tok = g.add(tok, h)?;
        let h = self.ln3.forward(g, s, tok)?;
        let h = self.fc1.forward(g, s, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, s, h)?;
        let tok = g.add(tok, h)?;

        let flat = g.transpose(tok);
        g.reshape(flat, &shape)
    }
}

#[derive(Debug, Clone)]
struct DownLevel {
    res: ResBlock,
    attn: Option<AttnBlock>,
    down: Conv2d,
}

#[derive(Debug, Clone)]
struct UpLevel {
    res: ResBlock,
    attn: Option<AttnBlock>,
}

/// `conv_in`, the downsampling levels and the bottleneck.
#[derive(Debug, Clone)]
struct EncoderPath {
    conv_in: Conv2d,
    levels: Vec<DownLevel>,
    mid_res: ResBlock,
    mid_attn: Option<AttnBlock>,
}

struct PathOutput {
    skips: Vec<Var>,
    mid: Var,
}

impl EncoderPath {
    fn new<T: Scalar>(
        s: &mut ParamStore<T>,
        prefix: &str,
        groups: (&str, &str),
        cfg: &DenoiserConfig,
        c_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (enc, mid) = groups;
        let conv_in = Conv2d::new(s, &format!("{prefix}conv_in"), enc, c_in, cfg.base_channels, 3, 1, rng);
        let mut prev = cfg.base_channels;
        let mut levels = Vec::new();
        for l in 0..cfg.channel_multipliers.len() {
            let ch = cfg.channels(l);
            let name = format!("{prefix}down{l}");
            let res = ResBlock::new(s, &format!("{name}.res"), enc, prev, ch, cfg.temb_dim(), rng);
            let attn = cfg
                .attn_resolutions
                .contains(&cfg.resolution(l))
                .then(|| AttnBlock::new(s, &format!("{name}.attn"), enc, ch, cfg.cond_dim, rng));
            let down = Conv2d::new(s, &format!("{name}.down"), enc, ch, ch, 3, 2, rng);
            levels.push(DownLevel { res, attn, down });
            prev = ch;
        }
        let mid_res = ResBlock::new(s, &format!("{prefix}mid.res"), mid, prev, prev, cfg.temb_dim(), rng);
        let mid_attn = cfg
            .attn_resolutions
            .contains(&cfg.mid_resolution())
            .then(|| AttnBlock::new(s, &format!("{prefix}mid.attn"), mid, prev, cfg.cond_dim, rng));
        EncoderPath {
            conv_in,
            levels,
            mid_res,
            mid_attn,
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        h: Var,
        temb: Var,
        cond: Var,
    ) -> Result<PathOutput> {
        let mut h = h;
        let mut skips = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            h = level.res.forward(g, s, h, temb)?;
            if let Some(a) = &level.attn {
                h = a.forward(g, s, h, cond)?;
            }
            skips.push(h);
            h = level.down.forward(g, s, h)?;
        }
        h = self.mid_res.forward(g, s, h, temb)?;
        if let Some(a) = &self.mid_attn {
            h = a.forward(g, s, h, cond)?;
        }
        Ok(PathOutput { skips, mid: h })
    }
}

/// Trainable copy of the encoder path fed with the hint; its features
/// enter the main network through zero-initialized 1x1 projections.
#[derive(Debug, Clone)]
struct ControlBranch {
    path: EncoderPath,
    hint_in: Conv2d,
    skip_proj: Vec<Conv2d>,
    mid_proj: Conv2d,
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    config: DenoiserConfig,
    store: ParamStore<T>,
    temb1: Linear,
    temb2: Linear,
    path: EncoderPath,
    ups: Vec<UpLevel>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
    ctrl: Option<ControlBranch>,
}

impl<T: Scalar> Denoiser<T> {
    /// Builds the network. Parameters shared with the cross-attention
    /// variant are drawn in the same order, so the same seed gives the
    /// same base weights for every variant.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new(DENOISER_STORE_TAG);
        let cfg = &config;
        let td = cfg.temb_dim();
        let temb1 = Linear::new(&mut s, "temb.fc1", ENC_GROUP, cfg.base_channels, td, &mut rng);
        let temb2 = Linear::new(&mut s, "temb.fc2", ENC_GROUP, td, td, &mut rng);

        let path_start = s.len();
        let path = EncoderPath::new(&mut s, "", (ENC_GROUP, MID_GROUP), cfg, BASE_INPUT_CHANNELS, &mut rng);
        let path_end = s.len();

        let levels = cfg.channel_multipliers.len();
        let mut ups = Vec::with_capacity(levels);
        let mut prev = cfg.channels(levels - 1);
        for l in (0..levels).rev() {
            let ch = cfg.channels(l);
            let name = format!("up{l}");
            let res = ResBlock::new(&mut s, &format!("{name}.res"), DEC_GROUP, prev + ch, ch, td, &mut rng);
            let attn = cfg
                .attn_resolutions
                .contains(&cfg.resolution(l))
                .then(|| AttnBlock::new(&mut s, &format!("{name}.attn"), DEC_GROUP, ch, cfg.cond_dim, &mut rng));
            ups.push(UpLevel { res, attn });
            prev = ch;
        }
        let out_norm = GroupNorm::new(&mut s, "out.norm", DEC_GROUP, prev);
        let out_conv = Conv2d::new(&mut s, "out.conv", DEC_GROUP, prev, 3, 3, 1, &mut rng);

        let mut path = path;
        if cfg.in_channels > BASE_INPUT_CHANNELS {
            widen_conv_input(&mut s, &mut path.conv_in, cfg.in_channels);
        }

        let ctrl = match cfg.variant {
            Variant::ControlNet => {
                let copy_start = s.len();
                let cpath = EncoderPath::new(&mut s, "ctrl.", (CTRL_GROUP, CTRL_GROUP), cfg, BASE_INPUT_CHANNELS, &mut rng);
                for (i, j) in (path_start..path_end).zip(copy_start..s.len()) {
                    let v = s.value(ParamId(i)).clone();
                    *s.value_mut(ParamId(j)) = v;
                }
                let hint_in = Conv2d::new(&mut s, "ctrl.hint_in", CTRL_GROUP, HINT_CHANNELS, cfg.base_channels, 3, 1, &mut rng);
                hint_in.zero_init(&mut s);
                let skip_proj = (0..levels)
                    .map(|l| {
                        let ch = cfg.channels(l);
                        let p = Conv2d::new(&mut s, &format!("ctrl.proj{l}"), CTRL_GROUP, ch, ch, 1, 1, &mut rng);
                        p.zero_init(&mut s);
                        p
                    })
                    .collect();
                let ch = cfg.channels(levels - 1);
                let mid_proj = Conv2d::new(&mut s, "ctrl.proj_mid", CTRL_GROUP, ch, ch, 1, 1, &mut rng);
                mid_proj.zero_init(&mut s);
                Some(ControlBranch {
                    path: cpath,
                    hint_in,
                    skip_proj,
                    mid_proj,
                })
            }
            _ => None,
        };

        Ok(Denoiser {
            config,
            store: s,
            temb1,
            temb2,
            path,
            ups,
            out_norm,
            out_conv,
            ctrl,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Freezes or unfreezes the downsampling half (and timestep MLP).
    pub fn set_encoder_trainable(&mut self, trainable: bool) {
        self.store
            .set_group_trainable(ENC_GROUP, trainable)
            .expect("encoder group exists");
    }

    /// Noise prediction `[3, h, w]` inside a graph.
    pub fn forward_graph(&self, g: &mut Graph<T>, x_in: Var, hint: Option<Var>, t: usize, cond: Var) -> Result<Var> {
        let cfg = &self.config;
        let xs = g.shape(x_in).to_vec();
        if xs.len() != 3 || xs[0] != cfg.in_channels || xs[1] != cfg.image_size || xs[2] != cfg.image_size {
            return Err(Error::Config(format!(
                "denoiser expects [{}, {n}, {n}] input, got {:?}",
                cfg.in_channels,
                xs,
                n = cfg.image_size
            )));
        }
        let cs = g.shape(cond).to_vec();
        if cs.len() != 2 || cs[1] != cfg.cond_dim {
            return Err(Error::Config(format!(
                "conditioning width {:?} does not match cond dim {}",
                cs, cfg.cond_dim
            )));
        }
        let s = &self.store;
        let tf = g.constant(timestep_features(t, cfg.base_channels));
        let te = self.temb1.forward(g, s, tf)?;
        let te = g.silu(te);
        let te = self.temb2.forward(g, s, te)?;
        let temb = g.silu(te);

        let h0 = self.path.conv_in.forward(g, s, x_in)?;
        let PathOutput { mut skips, mut mid } = self.path.forward(g, s, h0, temb, cond)?;

        if let Some(ctrl) = &self.ctrl {
            let hint = hint.ok_or_else(|| Error::Argument("controlnet variant needs a hint input".into()))?;
            let hs = g.shape(hint).to_vec();
            if hs != [HINT_CHANNELS, cfg.image_size, cfg.image_size] {
                return Err(Error::Dimension(format!("hint shape {:?}", hs)));
            }
            let c0 = ctrl.path.conv_in.forward(g, s, x_in)?;
            let hh = ctrl.hint_in.forward(g, s, hint)?;
            let c0 = g.add(c0, hh)?;
            let side = ctrl.path.forward(g, s, c0, temb, cond)?;
            for (i, (&f, proj)) in side.skips.iter().zip(&ctrl.skip_proj).enumerate() {
                let p = proj.forward(g, s, f)?;
                skips[i] = g.add(skips[i], p)?;
            }
            let p = ctrl.mid_proj.forward(g, s, side.mid)?;
            mid = g.add(mid, p)?;
        }

        let mut h = mid;
        for up in &self.ups {
            h = g.upsample2x(h);
            let skip = skips.pop().expect("one skip per level");
            h = g.concat0(&[h, skip])?;
            h = up.res.forward(g, s, h, temb)?;
            if let Some(a) = &up.attn {
                h = a.forward(g, s, h, cond)?;
            }
        }
        let h = self.out_norm.forward(g, s, h)?;
        let h = g.silu(h);
        self.out_conv.forward(g, s, h)
    }

    /// Noise prediction without gradient bookkeeping.
    pub fn predict_eps(&self, input: &DenoiserInput<T>, t: usize, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(input.main.clone());
        let hint = input.hint.clone().map(|h| g.constant(h));
        let c = g.constant(cond.clone());
        let out = self.forward_graph(&mut g, x, hint, t, c)?;
        Ok(g.value(out).clone())
    }
}

/// Extends a 7-channel input convolution with zero weights for the extra
/// channels.
fn widen_conv_input<T: Scalar>(s: &mut ParamStore<T>, conv: &mut Conv2d, c_in: usize) {
    let kk = conv.k * conv.k;
    let old = s.value(conv.w).clone();
    let mut data = vec![T::zero(); conv.c_out * c_in * kk];
    for o in 0..conv.c_out {
        let src = &old.data()[o * conv.c_in * kk..(o + 1) * conv.c_in * kk];
        data[o * c_in * kk..o * c_in * kk + conv.c_in * kk].copy_from_slice(src);
    }
    *s.value_mut(conv.w) = Tensor::from_vec(&[conv.c_out, c_in * kk], data).expect("sized");
    conv.c_in = c_in;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny(variant: Variant) -> DenoiserConfig {
        DenoiserConfig {
            image_size: 8,
            base_channels: 4,
            channel_multipliers: vec![1, 2],
            attn_resolutions: vec![4],
            cond_dim: 4,
            in_channels: BASE_INPUT_CHANNELS,
            variant: Variant::CrossAttention,
        }
        .with_variant(variant)
    }

    fn context(seed: u64, n: usize) -> (Tensor<f64>, SpatialContext<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg = ImageBuffer::new(n, n, (0..n * n * 3).map(|_| rng.random()).collect()).unwrap();
        let mask = MaskBuffer::from_fn(n, n, |r, c| (2..6).contains(&r) && (1..5).contains(&c)).unwrap();
        let obj = ImageBuffer::new(n, n, (0..n * n * 3).map(|_| rng.random()).collect()).unwrap();
        let ctx = SpatialContext::new(&bg, &mask, Some(&obj)).unwrap();
        let x = Tensor::randn(&[3, n, n], 1.0, &mut rng);
        let cond = Tensor::randn(&[5, 4], 1.0, &mut rng);
        (x, ctx, cond)
    }

    #[test]
    fn channel_counts() {
        let (x, ctx, _) = context(0, 8);
        for (v, c) in [(Variant::CrossAttention, 7), (Variant::Concat, 10), (Variant::ControlNet, 7)] {
            let inp = assemble_denoiser_input(&x, &ctx, v).unwrap();
            assert_eq!(inp.main.shape(), &[c, 8, 8]);
            assert_eq!(inp.hint.is_some(), v == Variant::ControlNet);
        }
        let bare = SpatialContext { inserted: None, ..ctx };
        assert!(matches!(assemble_denoiser_input(&x, &bare, Variant::Concat), Err(Error::Argument(_))));
    }

    #[test]
    fn output_shape_and_mismatch() {
        let d = Denoiser::<f64>::new(tiny(Variant::CrossAttention), 0).unwrap();
        let (x, ctx, cond) = context(1, 8);
        let inp = assemble_denoiser_input(&x, &ctx, Variant::CrossAttention).unwrap();
        assert_eq!(d.predict_eps(&inp, 10, &cond).unwrap().shape(), &[3, 8, 8]);
        let wide = assemble_denoiser_input(&x, &ctx, Variant::Concat).unwrap();
        assert!(matches!(d.predict_eps(&wide, 10, &cond), Err(Error::Config(_))));
        let mut bad = tiny(Variant::CrossAttention);
        bad.in_channels = 10;
        assert!(Denoiser::<f64>::new(bad, 0).is_err());
    }

    #[test]
    fn variants_share_base_weights() {
        let a = Denoiser::<f32>::new(tiny(Variant::CrossAttention), 3).unwrap();
        let b = Denoiser::<f32>::new(tiny(Variant::ControlNet), 3).unwrap();
        for e in a.params().entries() {
            let id = b.params().find(&e.name).unwrap();
            assert_eq!(&e.value, b.params().value(id), "{}", e.name);
        }
    }

    #[test]
    fn timestep_features_distinguish_steps() {
        let a = timestep_features::<f64>(3, 8);
        let b = timestep_features::<f64>(4, 8);
        assert_ne!(a, b);
        assert_eq!(timestep_features::<f64>(0, 8).data()[4..], [1.0; 4]);
    }
}
