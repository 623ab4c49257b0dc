//! Toy multi-view transformer that predicts clean raymaps from noisy ones.
//!
//! Each view's image is cut into a grid of patches and embedded by a small
//! per-patch network. The mask-conditioned noisy rays of each grid cell get
//! an affine embedding; the two embeddings are concatenated, tagged with
//! sinusoidal view and cell encodings, and run through pre-norm attention
//! blocks whose normalization is modulated by the diffusion timestep. A
//! linear head emits the 8 ray channels per cell.

mod config;
mod model;
mod params;
mod train;

pub use config::{ModelConfig, TrainConfig};
pub use model::{
    denoise, denoise_forward, embed_rays, encode_images, encode_images_tensor, positional_encoding,
    timestep_embedding, ParamVars,
};
pub use params::DenoiserParams;
pub use train::{
    draw_noise, sample_loss_and_grad, AdamState, NoiseDraw, SampleGrad, Trainer, TrainingSample,
};

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("invalid model: non-finite values in {0}")]
    NonFinite(String),
}
