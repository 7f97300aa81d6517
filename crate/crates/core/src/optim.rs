//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::graph::{Gradients, ParamKey};
use crate::params::{ParamEntry, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect()
        };
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters that are frozen or received no gradient are
    /// left untouched. `lr` gives the rate for each entry.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: impl Fn(&ParamEntry<T>) -> f64) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let tag = store.tag();
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            if !entry.trainable {
                continue;
            }
            let Some(g) = grads.map.get(&ParamKey { store: tag, index: i }) else {
                continue;
            };
            let rate = lr(entry);
            let step = T::c(rate / bc1);
            let decay = T::c(1.0 - rate * c.weight_decay);
            let inv_bc2 = T::c(1.0 / bc2);
            let eps = T::c(c.eps);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, p) in entry.value.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let denom = (v[k] * inv_bc2).sqrt() + eps;
                *p = *p * decay - step * m[k] / denom;
            }
        }
    }
}

/// Scales every gradient so the joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::c(max_norm / norm));
    }
    norm
}
