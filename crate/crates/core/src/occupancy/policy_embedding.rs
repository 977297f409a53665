//! Policy representations used to condition the occupancy model.
//!
//! * scalar: a sinusoidal code of the policy's index in an ordered policy set;
//! * sequential: an affine encoding of each state of a rollout window,
//!   averaged over the valid (unmasked) positions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::embedding::sinusoidal;
use crate::error::{Error, Result};
use crate::nn::{Matrix, ParamTensors};

pub const DEFAULT_WINDOW_MAX: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Scalar,
    Sequential,
}

impl std::fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Scalar => "scalar",
            EmbeddingMode::Sequential => "sequential",
        })
    }
}

impl std::str::FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(EmbeddingMode::Scalar),
            "sequential" => Ok(EmbeddingMode::Sequential),
            other => Err(Error::Config(format!("unknown embedding mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEmbedding {
    pub mode: EmbeddingMode,
    pub value: Vec<f64>,
    /// Number of states pooled (1 for scalar embeddings).
    pub context_len: usize,
}

/// Fixed-capacity window of normalized states with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWindow {
    states: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl PolicyWindow {
    /// Pads `states` with zero rows up to `capacity`.
    pub fn new(states: &[Vec<f64>], capacity: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Config("policy window is empty".into()));
        }
        if states.len() > capacity {
            return Err(Error::shape("policy window length", capacity, states.len()));
        }
        let dim = states[0].len();
        if let Some(s) = states.iter().find(|s| s.len() != dim) {
            return Err(Error::shape("policy window state", dim, s.len()));
        }
        let mut padded = states.to_vec();
        padded.resize(capacity, vec![0.0; dim]);
        let mut mask = vec![true; states.len()];
        mask.resize(capacity, false);
        Ok(Self {
            states: padded,
            mask,
        })
    }

    /// Up to `capacity` states evenly spaced over a rollout.
    pub fn from_rollout(states: &[Vec<f64>], capacity: usize) -> Result<Self> {
        if states.is_empty() || capacity == 0 {
            return Err(Error::Config("policy window is empty".into()));
        }
        if states.len() <= capacity {
            return Self::new(states, capacity);
        }
        let picked: Vec<Vec<f64>> = (0..capacity)
            .map(|i| states[i * (states.len() - 1) / (capacity - 1).max(1)].clone())
            .collect();
        Self::new(&picked, capacity)
    }

    pub fn capacity(&self) -> usize {
        self.mask.len()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// Mean of the valid states.
    pub fn masked_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.state_dim()];
        let mut count = 0usize;
        for (s, &m) in self.states.iter().zip(&self.mask) {
            if m {
                count += 1;
                for (acc, v) in mean.iter_mut().zip(s) {
                    *acc += v;
                }
            }
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        mean
    }
}

/// Conditioning information attached to each training tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyContext {
    Scalar(u32),
    Window(Arc<PolicyWindow>),
}

pub fn scalar_policy_embedding(index: u32, dim: usize) -> PolicyEmbedding {
    PolicyEmbedding {
        mode: EmbeddingMode::Scalar,
        value: sinusoidal(index as f64, dim),
        context_len: 1,
    }
}

/// Learnable per-state affine encoder for the sequential representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEncoder {
    /// Shape `(dim, state_dim)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl SequenceEncoder {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (state_dim as f64).sqrt();
        let values = (0..dim * state_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Matrix::from_vec(dim, state_dim, values).expect("consistent shape"),
            bias: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.weight.cols()
    }

    fn encode_state(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.weight.matvec_into(s, &mut out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    /// Encodes each valid window position and mean-pools the encodings.
    pub fn embed(&self, window: &PolicyWindow) -> Result<PolicyEmbedding> {
        if window.state_dim() != self.state_dim() {
            return Err(Error::shape("sequence encoder input", self.state_dim(), window.state_dim()));
        }
        let n = window.valid_len();
        if n == 0 {
            return Err(Error::Config("policy window is empty".into()));
        }
        let mut value = vec![0.0; self.dim()];
        for (s, &m) in window.states().iter().zip(window.mask()) {
            if !m {
                continue;
            }
            for (acc, e) in value.iter_mut().zip(self.encode_state(s)) {
                *acc += e;
            }
        }
        for v in &mut value {
            *v /= n as f64;
        }
        Ok(PolicyEmbedding {
            mode: EmbeddingMode::Sequential,
            value,
            context_len: n,
        })
    }

    /// Accumulates the gradient of `embed(window) . grad` into `grads`
    /// (weight tensor first, then bias).
    pub fn backward_into(&self, window: &PolicyWindow, grad: &[f64], grads: &mut EncoderGrads) {
        let mean = window.masked_mean();
        let cols = self.state_dim();
        for (r, &g) in grad.iter().enumerate() {
            for c in 0..cols {
                grads.weight[r * cols + c] += g * mean[c];
            }
            grads.bias[r] += g;
        }
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            weight: vec![0.0; self.weight.values().len()],
            bias: vec![0.0; self.dim()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamTensors for SequenceEncoder {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.values(), &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.values_mut(), &mut self.bias]
    }
}

impl ParamTensors for EncoderGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}
