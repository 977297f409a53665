//! Environment and behaviour-policy registry for the command line.

use std::sync::Arc;

use dvf_core::envs::{collect_episodes, CollectOptions, Controller, EnergyPumping, Env, MazeEnv, MazeSpec, MountainCar, Step, WaypointController};
use dvf_core::occupancy::Dataset;
use rand::{Rng, RngCore};

use crate::config::EnvId;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone)]
pub enum AnyEnv {
    MountainCar(MountainCar),
    Maze(MazeEnv),
}

impl AnyEnv {
    pub fn new(id: EnvId) -> Self {
        match maze_spec(id) {
            Some(spec) => AnyEnv::Maze(MazeEnv::new(spec)),
            None => AnyEnv::MountainCar(MountainCar::default()),
        }
    }

    fn inner(&self) -> &dyn Env {
        match self {
            AnyEnv::MountainCar(e) => e,
            AnyEnv::Maze(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Env {
        match self {
            AnyEnv::MountainCar(e) => e,
            AnyEnv::Maze(e) => e,
        }
    }
}

impl Env for AnyEnv {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }
    fn action_bound(&self) -> Vec<f64> {
        self.inner().action_bound()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner_mut().reset(rng)
    }
    fn state(&self) -> Vec<f64> {
        self.inner().state()
    }
    fn step(&mut self, action: &[f64]) -> Step {
        self.inner_mut().step(action)
    }
}

pub fn maze_spec(id: EnvId) -> Option<Arc<MazeSpec>> {
    match id {
        EnvId::MountainCar => None,
        EnvId::UMaze => Some(Arc::new(MazeSpec::u_maze())),
        EnvId::LargeMaze => Some(Arc::new(MazeSpec::large_maze())),
    }
}

#[derive(Debug, Clone)]
pub enum Behaviour {
    Pump(EnergyPumping),
    Waypoint(WaypointController),
}

impl Controller for Behaviour {
    fn act(&mut self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        match self {
            Behaviour::Pump(c) => c.act(state, rng),
            Behaviour::Waypoint(c) => c.act(state, rng),
        }
    }

    fn reset(&mut self) {
        match self {
            Behaviour::Pump(c) => c.reset(),
            Behaviour::Waypoint(c) => c.reset(),
        }
    }
}

/// Random-action fraction of Mountain Car behaviour policy `k` out of
/// `count`: evenly spaced from 1 (uniform random) down to 0 (pure energy
/// pumping), so ids are ordered from worst to best.
pub fn pumping_epsilon(k: usize, count: usize) -> f64 {
    if count <= 1 {
        return 0.0;
    }
    1.0 - k as f64 / (count - 1) as f64
}

/// Behaviour policies in policy-id order. Mountain Car takes `count`
/// steps along the epsilon ladder; mazes have one goal-seeking controller per
/// goal and ignore `count`.
pub fn behaviour_policies(id: EnvId, count: usize) -> Result<Vec<Behaviour>> {
    match maze_spec(id) {
        None => {
            if count == 0 {
                return Err(HarnessError::Config("need at least one behaviour policy".into()));
            }
            Ok((0..count)
                .map(|k| {
                    Behaviour::Pump(EnergyPumping {
                        epsilon: pumping_epsilon(k, count),
                    })
                })
                .collect())
        }
        Some(spec) => (0..spec.goals.len())
            .map(|g| Ok(Behaviour::Waypoint(WaypointController::new(spec.clone(), g)?)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectSpec {
    pub env: EnvId,
    pub policies: usize,
    pub episodes_per_policy: usize,
    pub include_actions: bool,
    pub include_rewards: bool,
}

/// Collects every behaviour policy in id order, numbering episodes
/// consecutively.
pub fn collect<R: Rng + ?Sized>(spec: &CollectSpec, rng: &mut R) -> Result<Dataset> {
    let env = AnyEnv::new(spec.env);
    let mut episodes = Vec::new();
    for (k, ctrl) in behaviour_policies(spec.env, spec.policies)?.into_iter().enumerate() {
        let opts = CollectOptions {
            episodes: spec.episodes_per_policy,
            policy_id: k as u32,
            first_episode_id: episodes.len() as u64,
            include_actions: spec.include_actions,
            include_rewards: spec.include_rewards,
        };
        episodes.extend(collect_episodes(&env, &ctrl, &opts, rng)?);
    }
    Ok(Dataset::new(episodes)?)
}
