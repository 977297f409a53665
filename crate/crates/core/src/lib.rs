//! Diffused value functions: a diffusion model of the discounted state
//! occupancy, a symlog reward regressor, Monte-Carlo value estimates built
//! from the two, and a squashed-Gaussian policy decoded against them.

pub mod diffusion;
pub mod envs;
pub mod error;
pub mod nn;
pub mod occupancy;
pub mod policy;
pub mod reward;
pub mod value;

pub use error::{Error, Result};
