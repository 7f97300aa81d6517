//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built per forward pass. Parameters are pulled in from a
//! [`ParamStore`]; frozen parameters enter as constants so no gradient is
//! ever produced for them. After [`Graph::backward`] the parameter
//! gradients are returned keyed by store tag and parameter index.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: u32,
    pub index: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

enum Op<T> {
    Leaf,
    Param(ParamKey),
    MatMul(Var, bool, Var, bool),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddChan(Var, Var),
    MulChan(Var, Var),
    Gelu(Var),
    Silu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Tensor<T>, Vec<T>),
    GroupNorm(Var, usize, Tensor<T>, Vec<T>),
    Conv2d(Var, Var, ConvGeom, Tensor<T>),
    Upsample2x(Var),
    Concat0(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    WeightedSqErr(Var, Tensor<T>, Option<Tensor<T>>, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamKey, Var>,
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    pub map: HashMap<ParamKey, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&ParamKey {
            store: store.tag(),
            index: id.0,
        })
    }

    /// Accumulates `other` into `self`.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (k, g) in other.map {
            match self.map.get_mut(&k) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.map.insert(k, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        let mut keys: Vec<_> = self.map.keys().copied().collect();
        keys.sort();
        let mut acc = T::zero();
        for k in keys {
            for &v in self.map[&k].data() {
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::c((2.0 / std::f64::consts::PI).sqrt());
    let a = T::c(0.044715);
    let half = T::c(0.5);
    let x3 = x * x * x;
    let u = c * (x + a * x3);
    let th = u.tanh();
    let v = half * x * (T::one() + th);
    let du = c * (T::one() + T::c(3.0) * a * x * x);
    let d = half * (T::one() + th) + half * x * (T::one() - th * th) * du;
    (v, d)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (see [`Graph::backward_with_inputs`]).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Brings a parameter into the graph; frozen parameters become constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = ParamKey {
            store: store.tag(),
            index: id.0,
        };
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let value = store.value(id).clone();
        let v = if trainable {
            self.push(value, Op::Param(key), true)
        } else {
            self.push(value, Op::Leaf, false)
        };
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let v = Tensor::matmul(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, ta, b, tb), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    fn row_check(&self, x: Var, b: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        let d = *xs.last().unwrap_or(&0);
        if xs.len() != 2 || bs.iter().product::<usize>() != d {
            return Err(Error::Dimension(format!(
                "row broadcast of {:?} onto {:?}",
                bs, xs
            )));
        }
        Ok((xs[0], d))
    }

    /// `x[i, j] + b[j]` for `x` of shape `[n, d]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, d) = self.row_check(x, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bv[i % d];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::AddRow(x, b), rg))
    }

    /// `x[i, j] * g[j]` for `x` of shape `[n, d]`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (_, d) = self.row_check(x, g)?;
        let gv = self.value(g).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= gv[i % d];
        }
        let rg = self.rg(&[x, g]);
        Ok(self.push(v, Op::MulRow(x, g), rg))
    }

    fn chan_check(&self, x: Var, b: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        let c = xs[0];
        if self.value(b).numel() != c {
            return Err(Error::Dimension(format!(
                "channel broadcast of {:?} onto {:?}",
                self.shape(b),
                xs
            )));
        }
        Ok((c, self.value(x).row_len()))
    }

    /// `x[c, ..] + b[c]`.
    pub fn add_chan(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, hw) = self.chan_check(x, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bv[i / hw];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::AddChan(x, b), rg))
    }

    /// `x[c, ..] * g[c]`.
    pub fn mul_chan(&mut self, x: Var, g: Var) -> Result<Var> {
        let (_, hw) = self.chan_check(x, g)?;
        let gv = self.value(g).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= gv[i / hw];
        }
        let rg = self.rg(&[x, g]);
        Ok(self.push(v, Op::MulChan(x, g), rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| gelu_parts(a).0);
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * sigmoid(a));
        let rg = self.rg(&[x]);
        self.push(v, Op::Silu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let d = *v.shape().last().unwrap();
        for row in v.data_mut().chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        let rg = self.rg(&[x]);
        self.push(v, Op::SoftmaxRows(x), rg)
    }

    /// Normalizes each row of a `[n, d]` tensor to zero mean, unit variance.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = *xv.shape().last().unwrap();
        let mut xhat = xv.clone();
        let mut inv = Vec::with_capacity(xv.numel() / d);
        let dn = T::c(d as f64);
        for row in xhat.data_mut().chunks_mut(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / dn;
            let is = T::one() / (var + T::c(eps)).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv.push(is);
        }
        let rg = self.rg(&[x]);
        let out = xhat.clone();
        self.push(out, Op::LayerNormRows(x, xhat, inv), rg)
    }

    /// Group normalization over a `[c, ...]` tensor without affine terms.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape()[0];
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{c} channels not divisible into {groups} groups"
            )));
        }
        let glen = xv.numel() / groups;
        let mut xhat = xv.clone();
        let mut inv = Vec::with_capacity(groups);
        let n = T::c(glen as f64);
        for chunk in xhat.data_mut().chunks_mut(glen) {
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::c(eps)).sqrt();
            for e in chunk.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv.push(is);
        }
        let rg = self.rg(&[x]);
        let out = xhat.clone();
        Ok(self.push(out, Op::GroupNorm(x, groups, xhat, inv), rg))
    }

    /// 2-D convolution of `x: [cin, h, w]` with `w: [cout, cin*k*k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 2 || ws[1] != xs[0] * k * k {
            return Err(Error::Dimension(format!(
                "conv2d input {:?} with weight {:?} (k={k})",
                xs, ws
            )));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(self.value(x).data(), geom);
        let out = Tensor::matmul(self.value(w), false, &cols, false)?.reshape(&[ws[0], ho, wo])?;
        let rg = self.rg(&[x, w]);
        // The column buffer is only needed to differentiate w.r.t. the weight.
        let keep = if self.nodes[w.0].requires_grad {
            cols
        } else {
            Tensor::zeros(&[0])
        };
        Ok(self.push(out, Op::Conv2d(x, w, geom, keep), rg))
    }

    /// Nearest-neighbour 2x upsampling of `[c, h, w]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let src = xv.data();
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(ch * 2 * h + i) * 2 * w + j] = src[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        let v = Tensor::from_vec(&[c, 2 * h, 2 * w], out).expect("sized");
        let rg = self.rg(&[x]);
        self.push(v, Op::Upsample2x(x), rg)
    }

    /// Concatenation along the leading axis.
    pub fn concat0(&mut self, xs: &[Var]) -> Result<Var> {
        let tail = self.shape(xs[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s[1..] != tail[..] {
                return Err(Error::Dimension(format!(
                    "concat of {:?} with trailing {:?}",
                    s, tail
                )));
            }
            lead += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let v = Tensor::from_vec(&shape, data)?;
        let rg = self.rg(xs);
        Ok(self.push(v, Op::Concat0(xs.to_vec()), rg))
    }

    /// Concatenation of 2-D tensors along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let n = self.shape(xs[0])[0];
        let widths: Vec<usize> = xs.iter().map(|&x| self.shape(x)[1]).collect();
        if xs.iter().any(|&x| self.shape(x).len() != 2 || self.shape(x)[0] != n) {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); n * total];
        let mut off = 0;
        for (&x, &wd) in xs.iter().zip(&widths) {
            let src = self.value(x).data();
            for r in 0..n {
                data[r * total + off..r * total + off + wd]
                    .copy_from_slice(&src[r * wd..(r + 1) * wd]);
            }
            off += wd;
        }
        let v = Tensor::from_vec(&[n, total], data)?;
        let rg = self.rg(xs);
        Ok(self.push(v, Op::ConcatCols(xs.to_vec()), rg))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if end > xv.shape()[0] || start >= end {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let rl = xv.row_len();
        let mut shape = xv.shape().to_vec();
        shape[0] = end - start;
        let v = Tensor::from_vec(&shape, xv.data()[start * rl..end * rl].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SliceRows(x, start), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if end > d || start >= end {
            return Err(Error::Dimension(format!("col slice {start}..{end} of width {d}")));
        }
        let wd = end - start;
        let mut data = Vec::with_capacity(n * wd);
        for r in 0..n {
            data.extend_from_slice(&xv.data()[r * d + start..r * d + end]);
        }
        let v = Tensor::from_vec(&[n, wd], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SliceCols(x, start), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose2();
        let rg = self.rg(&[x]);
        self.push(v, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    /// `sum(weight * (pred - target)^2) / denom` as a scalar node.
    pub fn weighted_sq_err(
        &mut self,
        pred: Var,
        target: Tensor<T>,
        weight: Option<Tensor<T>>,
        denom: T,
    ) -> Result<Var> {
        let p = self.value(pred);
        p.check_same(&target)?;
        if let Some(w) = &weight {
            p.check_same(w)?;
        }
        let mut acc = T::zero();
        for (i, (&a, &b)) in p.data().iter().zip(target.data()).enumerate() {
            let d = a - b;
            let w = weight.as_ref().map_or(T::one(), |w| w.data()[i]);
            acc += w * d * d;
        }
        let v = Tensor::scalar(acc / denom);
        let rg = self.rg(&[pred]);
        Ok(self.push(v, Op::WeightedSqErr(pred, target, weight, denom), rg))
    }

    /// Backpropagates from a scalar node; returns parameter gradients.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        self.backward_with_inputs(out).0
    }

    /// Backpropagates and also returns gradients for every node created by
    /// [`Graph::input`], indexed by `Var`.
    pub fn backward_with_inputs(&self, out: Var) -> (Gradients<T>, HashMap<Var, Tensor<T>>) {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), T::one()));
        let mut params = Gradients::default();
        let mut inputs = HashMap::new();

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    inputs.insert(Var(idx), g);
                }
                Op::Param(key) => {
                    params.map.insert(*key, g);
                }
                op => self.propagate(op, &node.value, g, &mut grads),
            }
        }
        (params, inputs)
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, ta, b, tb) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let da = if *ta {
                        Tensor::matmul(bv, *tb, &g, true)
                    } else {
                        Tensor::matmul(&g, false, bv, !*tb)
                    }
                    .expect("matmul grad shapes");
                    self.acc(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = if *tb {
                        Tensor::matmul(&g, true, av, *ta)
                    } else {
                        Tensor::matmul(av, !*ta, &g, false)
                    }
                    .expect("matmul grad shapes");
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *b, g.clone());
                self.acc(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *b, g.map(|x| -x));
                self.acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da = g.zip_map(self.value(*b), |x, y| x * y).unwrap();
                    self.acc(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = g.zip_map(self.value(*a), |x, y| x * y).unwrap();
                    self.acc(grads, *b, db);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, g.map(|x| x * s));
            }
            Op::AddRow(x, b) => {
                if self.needs(*b) {
                    let d = self.value(*b).numel();
                    let mut db = vec![T::zero(); d];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[i % d] += v;
                    }
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::from_vec(&shape, db).unwrap());
                }
                self.acc(grads, *x, g);
            }
            Op::MulRow(x, gm) => {
                let d = self.value(*gm).numel();
                if self.needs(*gm) {
                    let xv = self.value(*x).data();
                    let mut dg = vec![T::zero(); d];
                    for (i, &v) in g.data().iter().enumerate() {
                        dg[i % d] += v * xv[i];
                    }
                    let shape = self.shape(*gm).to_vec();
                    self.acc(grads, *gm, Tensor::from_vec(&shape, dg).unwrap());
                }
                if self.needs(*x) {
                    let gv = self.value(*gm).data();
                    let mut dx = g;
                    for (i, e) in dx.data_mut().iter_mut().enumerate() {
                        *e *= gv[i % d];
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::AddChan(x, b) => {
                if self.needs(*b) {
                    let hw = self.value(*x).row_len();
                    let c = self.value(*b).numel();
                    let mut db = vec![T::zero(); c];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[i / hw] += v;
                    }
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::from_vec(&shape, db).unwrap());
                }
                self.acc(grads, *x, g);
            }
            Op::MulChan(x, gm) => {
                let hw = self.value(*x).row_len();
                if self.needs(*gm) {
                    let c = self.value(*gm).numel();
                    let xv = self.value(*x).data();
                    let mut dg = vec![T::zero(); c];
                    for (i, &v) in g.data().iter().enumerate() {
                        dg[i / hw] += v * xv[i];
                    }
                    let shape = self.shape(*gm).to_vec();
                    self.acc(grads, *gm, Tensor::from_vec(&shape, dg).unwrap());
                }
                if self.needs(*x) {
                    let gv = self.value(*gm).data();
                    let mut dx = g;
                    for (i, e) in dx.data_mut().iter_mut().enumerate() {
                        *e *= gv[i / hw];
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Gelu(x) => {
                let dx = g.zip_map(self.value(*x), |gv, xv| gv * gelu_parts(xv).1).unwrap();
                self.acc(grads, *x, dx);
            }
            Op::Silu(x) => {
                let dx = g
                    .zip_map(self.value(*x), |gv, xv| {
                        let s = sigmoid(xv);
                        gv * (s + xv * s * (T::one() - s))
                    })
                    .unwrap();
                self.acc(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let d = *out.shape().last().unwrap();
                let mut dx = g;
                for (grow, yrow) in dx.data_mut().chunks_mut(d).zip(out.data().chunks(d)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (e, &y) in grow.iter_mut().zip(yrow) {
                        *e = y * (*e - dot);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LayerNormRows(x, xhat, inv) => {
                let d = *xhat.shape().last().unwrap();
                let dn = T::c(d as f64);
                let mut dx = g;
                for ((grow, xrow), &is) in dx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(xhat.data().chunks(d))
                    .zip(inv)
                {
                    norm_backward(grow, xrow, is, dn);
                }
                self.acc(grads, *x, dx);
            }
            Op::GroupNorm(x, groups, xhat, inv) => {
                let glen = xhat.numel() / groups;
                let dn = T::c(glen as f64);
                let mut dx = g;
                for ((grow, xrow), &is) in dx
                    .data_mut()
                    .chunks_mut(glen)
                    .zip(xhat.data().chunks(glen))
                    .zip(inv)
                {
                    norm_backward(grow, xrow, is, dn);
                }
                self.acc(grads, *x, dx);
            }
            Op::Conv2d(x, w, geom, cols) => {
                let cout = self.shape(*w)[0];
                let g2 = g.reshape(&[cout, geom.ho * geom.wo]).unwrap();
                if self.needs(*w) {
                    let dw = Tensor::matmul(&g2, false, cols, true).unwrap();
                    self.acc(grads, *w, dw);
                }
                if self.needs(*x) {
                    let dcols = Tensor::matmul(self.value(*w), true, &g2, false).unwrap();
                    let dx = col2im(dcols.data(), *geom);
                    self.acc(grads, *x, dx);
                }
            }
            Op::Upsample2x(x) => {
                let s = self.shape(*x).to_vec();
                let (c, h, w) = (s[0], s[1], s[2]);
                let mut dx = vec![T::zero(); c * h * w];
                let gd = g.data();
                for ch in 0..c {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dx[(ch * h + i / 2) * w + j / 2] += gd[(ch * 2 * h + i) * 2 * w + j];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::from_vec(&s, dx).unwrap());
            }
            Op::Concat0(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    if self.needs(x) {
                        let s = self.shape(x).to_vec();
                        let part = Tensor::from_vec(&s, g.data()[off..off + n].to_vec()).unwrap();
                        self.acc(grads, x, part);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(xs) => {
                let n = g.shape()[0];
                let total = g.shape()[1];
                let mut off = 0;
                for &x in xs {
                    let wd = self.shape(x)[1];
                    if self.needs(x) {
                        let mut part = Vec::with_capacity(n * wd);
                        for r in 0..n {
                            part.extend_from_slice(&g.data()[r * total + off..r * total + off + wd]);
                        }
                        self.acc(grads, x, Tensor::from_vec(&[n, wd], part).unwrap());
                    }
                    off += wd;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let rl = xv.row_len();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * rl..start * rl + g.numel()].copy_from_slice(g.data());
                self.acc(grads, *x, dx);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let wd = g.shape()[1];
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..n {
                    dx.data_mut()[r * d + start..r * d + start + wd]
                        .copy_from_slice(&g.data()[r * wd..(r + 1) * wd]);
                }
                self.acc(grads, *x, dx);
            }
            Op::Transpose(x) => {
                self.acc(grads, *x, g.transpose2());
            }
            Op::Reshape(x) => {
                let s = self.shape(*x).to_vec();
                self.acc(grads, *x, g.reshape(&s).unwrap());
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                self.acc(grads, *x, Tensor::full(&s, g.data()[0]));
            }
            Op::WeightedSqErr(p, target, weight, denom) => {
                let gs = g.data()[0];
                let two = T::c(2.0);
                let pv = self.value(*p);
                let mut dp = pv.clone();
                for (i, e) in dp.data_mut().iter_mut().enumerate() {
                    let w = weight.as_ref().map_or(T::one(), |w| w.data()[i]);
                    *e = gs * two * w * (*e - target.data()[i]) / *denom;
                }
                self.acc(grads, *p, dp);
            }
        }
    }
}

fn norm_backward<T: Scalar>(g: &mut [T], xhat: &[T], inv: T, n: T) {
    let mg = g.iter().copied().sum::<T>() / n;
    let mgx = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
    for (e, &xh) in g.iter_mut().zip(xhat) {
        *e = inv * (*e - mg - xh * mgx);
    }
}

fn im2col<T: Scalar>(x: &[T], g: ConvGeom) -> Tensor<T> {
    let rows = g.cin * g.k * g.k;
    let cols = g.ho * g.wo;
    let mut out = vec![T::zero(); rows * cols];
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let src_row = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[oi * g.wo + oj] = x[src_row + jj as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[rows, cols], out).expect("sized")
}

fn col2im<T: Scalar>(dcols: &[T], g: ConvGeom) -> Tensor<T> {
    let cols = g.ho * g.wo;
    let mut dx = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let src = &dcols[r * cols..(r + 1) * cols];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst_row = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dx[dst_row + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.cin, g.h, g.w], dx).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w * f(x)))/dx for a single-input op.
    fn check_op(shape: &[usize], f: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Tensor::<f64>::randn(shape, 1.0, &mut rng);
        let eval = |x: &Tensor<f64>, want_grad: bool| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = f(&mut g, xv);
            let n = g.value(y).numel();
            let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect();
            let wt = Tensor::from_vec(g.shape(y), w).unwrap();
            let wv = g.constant(wt);
            let prod = g.mul(y, wv).unwrap();
            let s = g.sum(prod);
            let val = g.value(s).data()[0];
            let grad = if want_grad {
                let (_, inputs) = g.backward_with_inputs(s);
                inputs.get(&xv).cloned()
            } else {
                None
            };
            (val, grad)
        };
        let (_, grad) = eval(&x0, true);
        let grad = grad.expect("input gradient");
        let h = 1e-6;
        for i in 0..x0.numel() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let num = (eval(&xp, false).0 - eval(&xm, false).0) / (2.0 * h);
            let ana = grad.data()[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            assert!(rel < 1e-5, "elem {i}: numeric {num} analytic {ana}");
        }
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_op(&[3, 5], |g, x| g.gelu(x));
        check_op(&[3, 5], |g, x| g.silu(x));
        check_op(&[3, 5], |g, x| g.softmax_rows(x));
        check_op(&[3, 5], |g, x| g.layer_norm_rows(x, 1e-5));
        check_op(&[4, 3, 3], |g, x| g.group_norm(x, 2, 1e-5).unwrap());
        check_op(&[2, 3, 3], |g, x| g.upsample2x(x));
        check_op(&[3, 4], |g, x| g.transpose(x));
        check_op(&[3, 4], |g, x| g.slice_cols(x, 1, 3).unwrap());
        check_op(&[3, 4], |g, x| g.slice_rows(x, 1, 3).unwrap());
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::<f64>::randn(&[4, 2 * 9], 1.0, &mut rng);
        check_op(&[2, 5, 4], move |g, x| {
            let wv = g.input(w.clone());
            g.conv2d(x, wv, 3, 2, 1).unwrap()
        });
        let b = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        check_op(&[4, 5], move |g, x| {
            let bv = g.constant(b.clone());
            let y = g.matmul(x, false, bv, false).unwrap();
            let z = g.matmul(y, true, x, false).unwrap();
            g.matmul(z, false, x, true).unwrap()
        });
        check_op(&[4, 3], |g, x| {
            let r = g.slice_rows(x, 0, 1).unwrap();
            let r = g.reshape(r, &[3]).unwrap();
            let a = g.mul_row(x, r).unwrap();
            let b = g.add_row(a, r).unwrap();
            let c = g.concat_cols(&[b, x]).unwrap();
            let d = g.concat0(&[c, c]).unwrap();
            g.scale(d, 0.5)
        });
        check_op(&[2, 3, 3], |g, x| {
            let c = g.slice_rows(x, 0, 1).unwrap();
            let c = g.reshape(c, &[9]).unwrap();
            let c = g.slice_rows(c, 0, 2).unwrap();
            let a = g.mul_chan(x, c).unwrap();
            let b = g.add_chan(a, c).unwrap();
            let s = g.sub(b, x).unwrap();
            g.add(s, x).unwrap()
        });
    }

    #[test]
    fn weighted_sq_err_gradient() {
        check_op(&[2, 3], |g, x| {
            let t = Tensor::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 0.0, 1.0, -1.0]).unwrap();
            let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.5, 1.0, 0.0]).unwrap();
            g.weighted_sq_err(x, t, Some(w), 6.0).unwrap()
        });
    }
}
