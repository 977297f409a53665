//! Continuous Mountain Car with the usual gym constants.

use rand::{Rng, RngCore};

use super::{Controller, Env, Step};

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.45;
pub const POWER: f64 = 0.0015;
pub const GRAVITY: f64 = 0.0025;
pub const HORIZON: usize = 999;
pub const GOAL_REWARD: f64 = 100.0;
pub const ACTION_COST: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainCar {
    pub position: f64,
    pub velocity: f64,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self {
            position: -0.5,
            velocity: 0.0,
        }
    }
}

impl MountainCar {
    pub fn new(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    /// Kinetic plus potential energy, with `U(x) = GRAVITY / 3 * sin(3x)` so
    /// that `-U'(x)` is the gravity term of the dynamics.
    pub fn energy(&self) -> f64 {
        0.5 * self.velocity * self.velocity + GRAVITY / 3.0 * (3.0 * self.position).sin()
    }

    /// First-order modified energy of the velocity-then-position update,
    /// `E - v U'(x) / 2`. It is conserved to second order by the unforced
    /// scheme, where plain `E` oscillates at first order.
    pub fn shadow_energy(&self) -> f64 {
        self.energy() - 0.5 * self.velocity * GRAVITY * (3.0 * self.position).cos()
    }
}

impl Env for MountainCar {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.position = rng.random_range(-0.6..-0.4);
        self.velocity = 0.0;
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }

    fn step(&mut self, action: &[f64]) -> Step {
        let a = action[0].clamp(-1.0, 1.0);
        self.velocity += a * POWER - GRAVITY * (3.0 * self.position).cos();
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position += self.velocity;
        self.position = self.position.clamp(MIN_POSITION, MAX_POSITION);
        if self.position <= MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        let done = self.position >= GOAL_POSITION;
        let mut reward = -ACTION_COST * a * a;
        if done {
            reward += GOAL_REWARD;
        }
        Step {
            state: self.state(),
            reward,
            done,
        }
    }
}

/// Bang-bang controller pushing along the velocity, mixed with uniform
/// random actions with probability `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyPumping {
    pub epsilon: f64,
}

impl EnergyPumping {
    pub fn greedy_action(state: &[f64]) -> f64 {
        if state[1] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl Controller for EnergyPumping {
    fn act(&mut self, state: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        if self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon {
            vec![rng.random_range(-1.0..=1.0)]
        } else {
            vec![Self::greedy_action(state)]
        }
    }
}
