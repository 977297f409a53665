//! Small deterministic environments and the controllers that collect the
//! offline datasets.

pub mod collect;
pub mod maze;
pub mod mountain_car;

pub use collect::{collect_dataset, collect_episodes, rollout, CollectOptions, Rollout};
pub use maze::{GeodesicField, MazeEnv, MazeSpec, WaypointController};
pub use mountain_car::{EnergyPumping, MountainCar};

use rand::RngCore;

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Value-semantics state machine.
pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_bound(&self) -> Vec<f64>;
    /// Step limit per episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn state(&self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Step;
}

/// Maps raw environment states to actions.
pub trait Controller {
    fn act(&mut self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;

    /// Called at the start of every episode.
    fn reset(&mut self) {}
}
