//! Reward regressor `r(s, a)` trained on symlog targets.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{io_err, read_dim, read_mlp, write_mlp, write_u32};
use crate::nn::{accumulate_batch, clip_global_norm, AdamState, Mlp, MlpGrads};

pub const REWARD_MAGIC: [u8; 4] = *b"DVFR";

pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub fn symexp(y: f64) -> f64 {
    y.signum() * y.abs().exp_m1()
}

/// Derivative of [`symexp`].
pub fn symexp_derivative(y: f64) -> f64 {
    y.abs().exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample {
    pub state: Vec<f64>,
    /// Empty for a state-only model.
    pub action: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct RewardModel {
    pub net: Mlp,
    state_dim: usize,
    action_dim: usize,
    adam: AdamState,
}

impl PartialEq for RewardModel {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.state_dim == other.state_dim && self.action_dim == other.action_dim
    }
}

impl RewardModel {
    /// `action_dim = 0` builds a state-only model.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let net = Mlp::new(state_dim + action_dim, hidden, 1, rng)?;
        Ok(Self::from_net(net, state_dim, action_dim))
    }

    fn from_net(net: Mlp, state_dim: usize, action_dim: usize) -> Self {
        let adam = AdamState::new(&net);
        Self {
            net,
            state_dim,
            action_dim,
            adam,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.state_dim {
            return Err(Error::shape("reward state", self.state_dim, state.len()));
        }
        if self.action_dim == 0 {
            return Ok(state.to_vec());
        }
        if action.len() != self.action_dim {
            return Err(Error::shape("reward action", self.action_dim, action.len()));
        }
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(x)
    }

    /// Network output in symlog space.
    pub fn predict_symlog(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.net.predict(&self.input(state, action)?)?[0])
    }

    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(symexp(self.predict_symlog(state, action)?))
    }

    /// Reward and its gradient with respect to the action (empty for a
    /// state-only model).
    pub fn predict_with_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.net.forward(&self.input(state, action)?)?;
        let y = out[0];
        let (_, input_grad) = self.net.backward(&cache, &[symexp_derivative(y)])?;
        Ok((symexp(y), input_grad[self.state_dim..].to_vec()))
    }

    /// Mean squared symlog error and its gradient.
    pub fn loss_and_grads(&self, batch: &[RewardSample]) -> Result<(f64, MlpGrads)> {
        if batch.is_empty() {
            return Err(Error::Config("reward batch is empty".into()));
        }
        if let Some(i) = batch.iter().position(|s| !s.reward.is_finite()) {
            return Err(Error::NonFinite(format!("reward label at batch index {i}")));
        }
        let w = 1.0 / batch.len() as f64;
        let (loss, grads) = accumulate_batch(batch.len(), || self.net.zero_grads(), |i, g| {
            let s = &batch[i];
            let (out, cache) = self.net.forward(&self.input(&s.state, &s.action)?)?;
            let diff = out[0] - symlog(s.reward);
            self.net.backward_into(&cache, &[2.0 * w * diff], g)?;
            Ok(w * diff * diff)
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("reward loss".into()));
        }
        Ok((loss, grads))
    }

    /// One clipped Adam step; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[RewardSample], lr: f64, max_grad_norm: f64) -> Result<f64> {
        let (loss, mut grads) = self.loss_and_grads(batch)?;
        clip_global_norm(&mut grads, max_grad_norm);
        self.adam.step(&mut self.net, &grads, lr)?;
        Ok(loss)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&REWARD_MAGIC).map_err(io_err)?;
        write_u32(w, self.state_dim as u32)?;
        write_u32(w, self.action_dim as u32)?;
        write_mlp(w, &self.net)
    }

    /// Restores parameters; optimizer moments start fresh.
    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        crate::nn::checkpoint::expect_magic(r, &REWARD_MAGIC)?;
        let state_dim = read_dim(r, "state dim")?;
        let action_dim = read_dim(r, "action dim")?;
        let net = read_mlp(r)?;
        if net.input_dim() != state_dim + action_dim || net.output_dim() != 1 {
            return Err(Error::Checkpoint("reward network shape does not match its header".into()));
        }
        Ok(Self::from_net(net, state_dim, action_dim))
    }
}
