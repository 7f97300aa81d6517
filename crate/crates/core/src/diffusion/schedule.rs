//! Linear-beta noise schedule and forward noising.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;
pub const DEFAULT_TIMESTEPS: usize = 1000;

/// Per-timestep `beta`, `alpha = 1 - beta` and cumulative `alpha_bar`
/// tables, held at `f64` regardless of the model scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(timesteps: usize) -> Result<NoiseSchedule> {
    if timesteps < 2 {
        return Err(Error::Config(format!("schedule needs T >= 2, got {timesteps}")));
    }
    let step = (BETA_END - BETA_START) / (timesteps - 1) as f64;
    NoiseSchedule::from_betas((0..timesteps).map(|i| BETA_START + step * i as f64).collect())
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("betas must lie in (0, 1) with T >= 2".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut acc = 1.0;
        let alpha_bars = alphas
            .iter()
            .map(|a| {
                acc *= a;
                acc
            })
            .collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or(Error::Index {
            t,
            len: self.len(),
        })
    }
}

/// `sqrt(ab) * x0 + sqrt(1 - ab) * eps` for an explicit `alpha_bar`.
pub fn q_sample_at<T: Scalar>(x0: &Tensor<T>, alpha_bar: f64, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let a = T::c(alpha_bar.sqrt());
    let b = T::c((1.0 - alpha_bar).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    q_sample_at(x0, schedule.alpha_bar(t)?, eps)
}
