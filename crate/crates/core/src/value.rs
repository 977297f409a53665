//! Monte-Carlo value estimates from sampled future states, and the one-step
//! Bellman construction `Q(s, a) = r(s, a) + gamma V(s')`.

use rand::{Rng, RngCore};

use crate::diffusion::{sample_batch, Conditioning, NoiseModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::occupancy::tuples::{sample_delta_t, sample_delta_t_unbounded};
use crate::occupancy::PolicyContext;
use crate::reward::RewardModel;

/// `(1 - gamma^k) / (1 - gamma)`: the discounted step count over `k` steps.
pub fn horizon_factor(gamma: f64, steps_remaining: usize) -> f64 {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    if steps_remaining == 0 {
        return 0.0;
    }
    (1.0 - gamma.powi(steps_remaining.min(i32::MAX as usize) as i32)) / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    pub fn factor(self, gamma: f64) -> f64 {
        match self {
            Horizon::Finite(k) => horizon_factor(gamma, k),
            Horizon::Infinite => 1.0 / (1.0 - gamma),
        }
    }

    pub fn sample_delta_t<R: Rng + ?Sized>(self, gamma: f64, rng: &mut R) -> usize {
        match self {
            Horizon::Finite(k) => sample_delta_t(gamma, k, rng),
            Horizon::Infinite => sample_delta_t_unbounded(gamma, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub mean: f64,
    pub rewards: Vec<f64>,
    pub n: usize,
    pub horizon_factor: f64,
}

/// Draws one future state per requested offset.
pub trait FutureSampler {
    fn sample(&self, state: &[f64], offsets: &[usize], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>>;
}

pub trait RewardFn {
    fn reward(&self, state: &[f64], action: &[f64]) -> Result<f64>;
}

/// Supplies the action scored at a sampled future state.
pub trait ActionSource {
    fn action(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

impl RewardFn for RewardModel {
    fn reward(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.predict(state, action)
    }
}

impl<F: Fn(&[f64], &[f64]) -> f64> RewardFn for F {
    fn reward(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self(state, action))
    }
}

/// No action at all, for state-only reward models.
pub struct NoAction;

impl ActionSource for NoAction {
    fn action(&self, _: &[f64], _: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// The trained diffusion model as a [`FutureSampler`] for a fixed policy
/// context.
pub struct DiffusionSampler<'a, M: NoiseModel + ?Sized> {
    pub model: &'a M,
    pub schedule: &'a NoiseSchedule,
    pub policy: PolicyContext,
    /// Optional `s_{t+1}` for models that condition on it.
    pub next_state: Option<Vec<f64>>,
}

impl<M: NoiseModel + ?Sized> FutureSampler for DiffusionSampler<'_, M> {
    fn sample(&self, state: &[f64], offsets: &[usize], rng: &mut dyn RngCore) -> Result<Vec<Vec<f64>>> {
        let conds: Vec<Conditioning> = offsets
            .iter()
            .map(|&dt| Conditioning {
                state: state.to_vec(),
                next_state: self.next_state.clone(),
                delta_t: dt,
                policy: self.policy.clone(),
            })
            .collect();
        sample_batch(self.model, &conds, self.schedule, rng)
    }
}

/// Mean that is exact when every entry is equal.
fn stable_mean(xs: &[f64]) -> f64 {
    let first = xs[0];
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

/// `V(s) ~= factor * mean_i r(s_i, pi(s_i))`, one fresh offset per sample.
#[allow(clippy::too_many_arguments)]
pub fn estimate_v<S, F, A>(
    state: &[f64],
    sampler: &S,
    reward: &F,
    actions: &A,
    n: usize,
    gamma: f64,
    horizon: Horizon,
    rng: &mut dyn RngCore,
) -> Result<ValueEstimate>
where
    S: FutureSampler + ?Sized,
    F: RewardFn + ?Sized,
    A: ActionSource + ?Sized,
{
    if n == 0 {
        return Err(Error::Config("value estimate needs at least one sample".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
    }
    let factor = horizon.factor(gamma);
    if horizon == Horizon::Finite(0) {
        return Ok(ValueEstimate {
            mean: 0.0,
            rewards: Vec::new(),
            n: 0,
            horizon_factor: 0.0,
        });
    }
    let offsets: Vec<usize> = (0..n).map(|_| horizon.sample_delta_t(gamma, rng)).collect();
    let futures = sampler.sample(state, &offsets, rng)?;
    let mut rewards = Vec::with_capacity(n);
    for s in &futures {
        let a = actions.action(s, rng)?;
        let r = reward.reward(s, &a)?;
        if !r.is_finite() {
            return Err(Error::NonFinite("reward at a sampled future state".into()));
        }
        rewards.push(r);
    }
    Ok(ValueEstimate {
        mean: factor * stable_mean(&rewards),
        rewards,
        n,
        horizon_factor: factor,
    })
}

/// `r + gamma * v_next`.
pub fn estimate_q(reward: f64, v_next: f64, gamma: f64) -> f64 {
    reward + gamma * v_next
}

/// Q and its action gradient. `v_next` does not depend on the action, so the
/// gradient is the reward model's.
pub fn q_with_action_grad(
    model: &RewardModel,
    state: &[f64],
    action: &[f64],
    v_next: f64,
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let (r, grad) = model.predict_with_action_grad(state, action)?;
    Ok((estimate_q(r, v_next, gamma), grad))
}
