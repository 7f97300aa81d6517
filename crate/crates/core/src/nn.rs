//! Layers shared by the encoder and the denoiser.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / (d_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), group, Tensor::randn(&[d_in, d_out], std, rng));
        let b = store.add(format!("{name}.b"), group, Tensor::zeros(&[d_out]));
        Linear { w, b, d_in, d_out }
    }

    /// `x: [n, d_in] -> [n, d_out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.matmul(x, false, w, false)?;
        g.add_row(y, b)
    }

    pub fn zero_init<T: Scalar>(&self, s: &mut ParamStore<T>) {
        for id in [self.w, self.b] {
            s.value_mut(id).data_mut().fill(T::zero());
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, group: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.g"), group, Tensor::ones(&[d])),
            bias: store.add(format!("{name}.b"), group, Tensor::zeros(&[d])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.layer_norm_rows(x, NORM_EPS);
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub groups: usize,
    pub gain: ParamId,
    pub bias: ParamId,
}

impl GroupNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, group: &str, c: usize) -> Self {
        let groups = [8, 4, 2, 1].into_iter().find(|g| c.is_multiple_of(*g)).unwrap_or(1);
        GroupNorm {
            groups,
            gain: store.add(format!("{name}.g"), group, Tensor::ones(&[c])),
            bias: store.add(format!("{name}.b"), group, Tensor::zeros(&[c])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.group_norm(x, self.groups, NORM_EPS)?;
        let gain = g.param(s, self.gain);
        let bias = g.param(s, self.bias);
        let y = g.mul_chan(n, gain)?;
        g.add_chan(y, bias)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / ((c_in * k * k) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            group,
            Tensor::randn(&[c_out, c_in * k * k], std, rng),
        );
        let b = store.add(format!("{name}.b"), group, Tensor::zeros(&[c_out]));
        Conv2d {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.conv2d(x, w, self.k, self.stride, self.k / 2)?;
        g.add_chan(y, b)
    }

    pub fn zero_init<T: Scalar>(&self, s: &mut ParamStore<T>) {
        for id in [self.w, self.b] {
            s.value_mut(id).data_mut().fill(T::zero());
        }
    }
}

/// Multi-head attention from `x: [n, d]` onto `ctx: [m, d_ctx]`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        d: usize,
        d_ctx: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), group, d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), group, d_ctx, d, rng),
            v: Linear::new(store, &format!("{name}.v"), group, d_ctx, d, rng),
            o: Linear::new(store, &format!("{name}.o"), group, d, d, rng),
            heads,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        ctx: Var,
    ) -> Result<Var> {
        let q = self.q.forward(g, s, x)?;
        let k = self.k.forward(g, s, ctx)?;
        let v = self.v.forward(g, s, ctx)?;
        let d = self.q.d_out;
        let hd = d / self.heads;
        let scale = T::c(1.0 / (hd as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * hd, (h + 1) * hd)?,
                    g.slice_cols(k, h * hd, (h + 1) * hd)?,
                    g.slice_cols(v, h * hd, (h + 1) * hd)?,
                )
            };
            let scores = g.matmul(qh, false, kh, true)?;
            let scores = g.scale(scores, scale);
            let p = g.softmax_rows(scores);
            outs.push(g.matmul(p, false, vh, false)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.o.forward(g, s, cat)
    }
}

/// Pre-norm transformer block: self-attention then a GELU MLP.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        group: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), group, d),
            attn: Attention::new(store, &format!("{name}.attn"), group, d, d, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), group, d),
            fc1: Linear::new(store, &format!("{name}.fc1"), group, d, 4 * d, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), group, 4 * d, d, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, s: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, s, x)?;
        let a = self.attn.forward(g, s, h, h)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, s, x)?;
        let h = self.fc1.forward(g, s, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, s, h)?;
        g.add(x, h)
    }
}
