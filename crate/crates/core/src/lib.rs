//! Identity-preserving generative object compositing at desk scale.
//!
//! Two models cooperate: an [`encoder::Encoder`] (ViT backbone plus content
//! adapter) turns a segmented object into conditioning tokens, and a
//! conditional UNet [`diffusion::Denoiser`] composites the object into a
//! masked background by DDIM sampling with per-step background blending.
//! Training runs in two stages (view-to-view identity pretraining, then
//! compositing with a frozen backbone).
//!
//! All numerics are generic over [`Scalar`]; training normally runs at
//! `f32` and gradient checks at `f64`. The aliases below name the common
//! instantiations.

pub mod data;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod image;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use image::{BBox, ImageBuffer, MaskBuffer};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Image = ImageBuffer<f32>;
pub type Mask = MaskBuffer<f32>;
pub type Image64 = ImageBuffer<f64>;
pub type Mask64 = MaskBuffer<f64>;
pub type Encoder32 = encoder::Encoder<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type Denoiser32 = diffusion::Denoiser<f32>;
pub type Denoiser64 = diffusion::Denoiser<f64>;
pub type TrainState32 = training::TrainState<f32>;
