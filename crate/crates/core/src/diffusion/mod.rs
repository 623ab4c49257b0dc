//! Noise schedule, forward process, mask conditioning, the masked x₀ loss
//! and the early-stopped reverse sampler.

mod process;
mod sampler;
mod schedule;

pub use process::{forward_diffuse, mask_condition, x0_loss, DiffusionState, LossValue, CHANNELS};
pub use sampler::{reverse_sample, rays_from_prediction, SampleOutput, SamplerConfig, DEFAULT_STOP_FRAC};
pub use schedule::{NoiseSchedule, DEFAULT_TIMESTEPS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Model(#[from] crate::denoiser::ModelError),
}
