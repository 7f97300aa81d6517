//! Noise schedule, conditional UNet, training losses and guided sampling.

pub mod loss;
pub mod sampling;
pub mod schedule;
pub mod unet;

pub use loss::{draw_noise, loss_comp, loss_id, ExampleDraw, LossOptions, LossOutput};
pub use sampling::{
    blend_background, cfg_combine, composite_over, ddim_step, ddim_timesteps, predict_x0, sample_composite,
    SampleRequest, DEFAULT_CFG_SCALE, DEFAULT_STEPS,
};
pub use schedule::{make_schedule, q_sample, q_sample_at, NoiseSchedule, DEFAULT_TIMESTEPS};
pub use unet::{
    assemble_denoiser_input, timestep_features, Denoiser, DenoiserConfig, DenoiserInput, SpatialContext, Variant,
};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Anything that predicts noise from an assembled input, a timestep and
/// conditioning tokens. Implemented by [`Denoiser`]; tests substitute
/// stubs.
pub trait NoisePredictor<T: Scalar> {
    fn variant(&self) -> Variant;
    fn image_size(&self) -> usize;
    fn predict_graph(&self, g: &mut Graph<T>, x_in: Var, hint: Option<Var>, t: usize, cond: Var) -> Result<Var>;
}

impl<T: Scalar> NoisePredictor<T> for Denoiser<T> {
    fn variant(&self) -> Variant {
        self.config().variant
    }

    fn image_size(&self) -> usize {
        self.config().image_size
    }

    fn predict_graph(&self, g: &mut Graph<T>, x_in: Var, hint: Option<Var>, t: usize, cond: Var) -> Result<Var> {
        self.forward_graph(g, x_in, hint, t, cond)
    }
}
