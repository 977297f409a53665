//! Occupancy training tuples `(s_t, s_{t+1}, s_{t+dt}, dt, context)`.

use std::sync::Arc;

use rand::Rng;

use super::dataset::{Dataset, EpisodeRecord};
use super::policy_embedding::{EmbeddingMode, PolicyContext, PolicyWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTuple {
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub future_state: Vec<f64>,
    pub delta_t: usize,
    pub policy: PolicyContext,
    /// Anchor index inside the source episode.
    pub t: usize,
    /// Transition count of the source episode.
    pub episode_len: usize,
}

/// Draws `dt` in `1..=remaining` with probability proportional to
/// `gamma^(dt-1)`, renormalized over the truncated support.
pub fn sample_delta_t<R: Rng + ?Sized>(gamma: f64, remaining: usize, rng: &mut R) -> usize {
    assert!(remaining >= 1, "no future steps to sample from");
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    if gamma == 0.0 || remaining == 1 {
        return 1;
    }
    // Inverse CDF: F(k) = (1 - gamma^k) / (1 - gamma^remaining).
    let u: f64 = rng.random();
    let mass = 1.0 - gamma.powi(remaining.min(i32::MAX as usize) as i32);
    let k = ((1.0 - u * mass).ln() / gamma.ln()).floor() as usize + 1;
    k.clamp(1, remaining)
}

/// Untruncated geometric draw, used for infinite-horizon evaluation.
pub fn sample_delta_t_unbounded<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> usize {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    if gamma == 0.0 {
        return 1;
    }
    let u: f64 = rng.random();
    ((1.0 - u).ln() / gamma.ln()).floor() as usize + 1
}

/// Conditioning context for an episode under the requested mode.
pub fn policy_context(ep: &EpisodeRecord, mode: EmbeddingMode, window_max: usize) -> Result<PolicyContext> {
    Ok(match mode {
        EmbeddingMode::Scalar => PolicyContext::Scalar(ep.policy_id),
        EmbeddingMode::Sequential => {
            PolicyContext::Window(Arc::new(PolicyWindow::from_rollout(&ep.states, window_max)?))
        }
    })
}

/// Samples `count` tuples from one (already normalized) episode. Only the
/// state sequence is read.
pub fn make_tuples<R: Rng + ?Sized>(
    states: &[Vec<f64>],
    context: &PolicyContext,
    gamma: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<OccupancyTuple>> {
    if states.len() < 2 {
        return Err(Error::shape("episode states (minimum)", 2, states.len()));
    }
    let h = states.len() - 1;
    Ok((0..count)
        .map(|_| {
            let t = rng.random_range(0..h);
            let delta_t = sample_delta_t(gamma, h - t, rng);
            OccupancyTuple {
                state: states[t].clone(),
                next_state: states[t + 1].clone(),
                future_state: states[t + delta_t].clone(),
                delta_t,
                policy: context.clone(),
                t,
                episode_len: h,
            }
        })
        .collect())
}

/// Draws tuples uniformly over all transitions of a normalized dataset.
#[derive(Debug, Clone)]
pub struct TupleSampler {
    contexts: Vec<PolicyContext>,
    /// Cumulative transition counts, for picking episodes by length.
    cumulative: Vec<usize>,
    gamma: f64,
}

impl TupleSampler {
    pub fn new(dataset: &Dataset, mode: EmbeddingMode, window_max: usize, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma {gamma} outside [0, 1)")));
        }
        let contexts = dataset
            .episodes
            .iter()
            .map(|ep| policy_context(ep, mode, window_max))
            .collect::<Result<Vec<_>>>()?;
        let mut cumulative = Vec::with_capacity(dataset.episodes.len());
        let mut acc = 0;
        for ep in &dataset.episodes {
            acc += ep.len();
            cumulative.push(acc);
        }
        Ok(Self {
            contexts,
            cumulative,
            gamma,
        })
    }

    pub fn context(&self, episode: usize) -> &PolicyContext {
        &self.contexts[episode]
    }

    /// Returns `(episode index, tuple)` pairs.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        dataset: &Dataset,
        count: usize,
        rng: &mut R,
    ) -> Vec<(usize, OccupancyTuple)> {
        let total = *self.cumulative.last().expect("dataset is nonempty");
        (0..count)
            .map(|_| {
                let pick = rng.random_range(0..total);
                let e = self.cumulative.partition_point(|&c| c <= pick);
                let mut tuples = make_tuples(&dataset.episodes[e].states, &self.contexts[e], self.gamma, 1, rng)
                    .expect("dataset episodes are validated");
                (e, tuples.pop().expect("one tuple"))
            })
            .collect()
    }
}
