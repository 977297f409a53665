//! Training-run checkpoints: one file holding every trained component.
//!
//! Layout (little-endian):
//!
//! | field        | encoding                                   |
//! |--------------|--------------------------------------------|
//! | magic        | `b"DVFB"`, then version `u32`              |
//! | step         | `u32`                                      |
//! | config       | `u32` byte length, then TOML text          |
//! | normalizer   | dim `u32`, min `f64 × dim`, max `f64 × dim` |
//! | schedule     | `T u32`, betas `f64 × T`                   |
//! | denoiser     | denoiser block                             |
//! | reward       | flag `u32`, then a reward block if set     |
//! | policy       | flag `u32`, then a policy block if set     |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dvf_core::diffusion::denoiser::{read_denoiser, write_denoiser};
use dvf_core::diffusion::{Denoiser, NoiseSchedule};
use dvf_core::nn::checkpoint::{expect_magic, read_dim, read_f64s, read_u32, write_f64s, write_u32};
use dvf_core::occupancy::Normalizer;
use dvf_core::policy::Policy;
use dvf_core::reward::RewardModel;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

pub const BUNDLE_MAGIC: [u8; 4] = *b"DVFB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub step: usize,
    pub config: RunConfig,
    pub normalizer: Normalizer,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
    pub reward: Option<RewardModel>,
    pub policy: Option<Policy>,
}

fn core<T>(r: dvf_core::Result<T>) -> Result<T> {
    r.map_err(HarnessError::from)
}

impl Bundle {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let err = |e: std::io::Error| HarnessError::Core(dvf_core::Error::Checkpoint(e.to_string()));
        w.write_all(&BUNDLE_MAGIC).map_err(err)?;
        core(write_u32(w, BUNDLE_VERSION))?;
        core(write_u32(w, self.step as u32))?;
        let text = self.config.to_toml();
        core(write_u32(w, text.len() as u32))?;
        w.write_all(text.as_bytes()).map_err(err)?;
        core(write_u32(w, self.normalizer.dim() as u32))?;
        core(write_f64s(w, self.normalizer.min()))?;
        core(write_f64s(w, self.normalizer.max()))?;
        core(write_u32(w, self.schedule.steps() as u32))?;
        core(write_f64s(w, self.schedule.betas()))?;
        core(write_denoiser(w, &self.denoiser))?;
        core(write_u32(w, self.reward.is_some() as u32))?;
        if let Some(r) = &self.reward {
            core(r.write(w))?;
        }
        core(write_u32(w, self.policy.is_some() as u32))?;
        if let Some(p) = &self.policy {
            core(p.write(w))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        core(expect_magic(r, &BUNDLE_MAGIC))?;
        let version = core(read_u32(r))?;
        if version != BUNDLE_VERSION {
            return Err(dvf_core::Error::Checkpoint(format!("unsupported bundle version {version}")).into());
        }
        let step = core(read_u32(r))? as usize;
        let len = core(read_dim(r, "config length"))?;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)
            .map_err(|e| dvf_core::Error::Checkpoint(e.to_string()))?;
        let text = String::from_utf8(text).map_err(|e| dvf_core::Error::Checkpoint(e.to_string()))?;
        let config = RunConfig::from_toml(&text)?;
        let dim = core(read_dim(r, "normalizer dim"))?;
        let min = core(read_f64s(r, dim))?;
        let max = core(read_f64s(r, dim))?;
        let normalizer = core(Normalizer::new(min, max))?;
        let steps = core(read_dim(r, "diffusion steps"))?;
        let schedule = core(NoiseSchedule::from_betas(core(read_f64s(r, steps))?))?;
        let denoiser = core(read_denoiser(r))?;
        let reward = match core(read_u32(r))? {
            0 => None,
            _ => Some(core(RewardModel::read(r))?),
        };
        let policy = match core(read_u32(r))? {
            0 => None,
            _ => Some(core(Policy::read(r))?),
        };
        Ok(Self {
            step,
            config,
            normalizer,
            schedule,
            denoiser,
            reward,
            policy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}
