//! DDPM noise schedule, denoiser and sampler.

pub mod denoiser;
pub mod embedding;
pub mod sampler;
pub mod schedule;

pub use denoiser::{
    diffusion_loss, diffusion_loss_value, diffusion_loss_with, Conditioning, Denoiser, DenoiserConfig,
    DenoiserGrads, NoiseDraws, NoiseModel,
};
pub use embedding::sinusoidal;
pub use sampler::{sample_batch, sample_future_states};
pub use schedule::NoiseSchedule;
