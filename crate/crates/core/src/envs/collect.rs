use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Controller, Env};
use crate::error::{Error, Result};
use crate::occupancy::{Dataset, EpisodeRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
}

impl Rollout {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Discounted return from every step `t`.
    pub fn returns_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rewards.len()];
        let mut acc = 0.0;
        for t in (0..self.rewards.len()).rev() {
            acc = self.rewards[t] + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

/// Resets the environment and runs the controller until termination or the
/// horizon.
pub fn rollout<E: Env + ?Sized, C: Controller + ?Sized>(env: &mut E, ctrl: &mut C, rng: &mut dyn RngCore) -> Rollout {
    ctrl.reset();
    let mut states = vec![env.reset(rng)];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut terminated = false;
    for _ in 0..env.horizon() {
        let a = ctrl.act(states.last().expect("nonempty"), rng);
        let step = env.step(&a);
        actions.push(a);
        rewards.push(step.reward);
        states.push(step.state);
        if step.done {
            terminated = true;
            break;
        }
    }
    Rollout {
        states,
        actions,
        rewards,
        terminated,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectOptions {
    pub episodes: usize,
    pub policy_id: u32,
    /// First episode id; later episodes count up from it.
    pub first_episode_id: u64,
    pub include_actions: bool,
    pub include_rewards: bool,
}

impl CollectOptions {
    pub fn new(episodes: usize, policy_id: u32) -> Self {
        Self {
            episodes,
            policy_id,
            first_episode_id: 0,
            include_actions: true,
            include_rewards: true,
        }
    }
}

/// Rolls out `opts.episodes` episodes, each on its own seeded stream drawn
/// serially from `rng`.
pub fn collect_episodes<E, C, R>(env: &E, ctrl: &C, opts: &CollectOptions, rng: &mut R) -> Result<Vec<EpisodeRecord>>
where
    E: Env + Clone + Send + Sync,
    C: Controller + Clone + Send + Sync,
    R: Rng + ?Sized,
{
    if opts.episodes == 0 {
        return Err(Error::Config("collect needs at least one episode".into()));
    }
    let seeds: Vec<u64> = (0..opts.episodes).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut env = env.clone();
            let mut ctrl = ctrl.clone();
            let mut stream = ChaCha8Rng::seed_from_u64(seed);
            let r = rollout(&mut env, &mut ctrl, &mut stream);
            EpisodeRecord::new(
                opts.first_episode_id + i as u64,
                opts.policy_id,
                r.states,
                opts.include_actions.then_some(r.actions),
                opts.include_rewards.then_some(r.rewards),
            )
        })
        .collect()
}

/// Collects episodes and writes them as a dataset file.
pub fn collect_dataset<E, C, R>(env: &E, ctrl: &C, opts: &CollectOptions, rng: &mut R, path: &Path) -> Result<Dataset>
where
    E: Env + Clone + Send + Sync,
    C: Controller + Clone + Send + Sync,
    R: Rng + ?Sized,
{
    let ds = Dataset::new(collect_episodes(env, ctrl, opts, rng)?)?;
    ds.write(path)?;
    Ok(ds)
}
