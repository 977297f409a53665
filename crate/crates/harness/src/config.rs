//! Run configuration, read from TOML with command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dvf_core::occupancy::EmbeddingMode;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvId {
    MountainCar,
    UMaze,
    LargeMaze,
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvId::MountainCar => "mountain-car",
            EnvId::UMaze => "u-maze",
            EnvId::LargeMaze => "large-maze",
        })
    }
}

impl FromStr for EnvId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mountain-car" => Ok(EnvId::MountainCar),
            "u-maze" => Ok(EnvId::UMaze),
            "large-maze" => Ok(EnvId::LargeMaze),
            other => Err(HarnessError::Config(format!(
                "unknown environment {other:?} (expected mountain-car, u-maze or large-maze)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvId,
    pub seed: u64,
    /// Gradient steps.
    pub steps: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    /// Future-state samples per value estimate.
    pub n_samples: usize,
    /// Batch states per step that get a fresh value estimate; the rest of
    /// the batch reuses their mean.
    pub value_states: usize,
    /// Reward-model updates per training step, each on a fresh batch.
    pub reward_updates: usize,
    pub alpha_ent: f64,
    pub bc_coef: f64,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub policy_dim: usize,
    /// `None` picks scalar embeddings when the dataset carries more than one
    /// policy id, sequential ones otherwise.
    pub policy_mode: Option<EmbeddingMode>,
    pub window_max: usize,
    pub condition_on_next: bool,
    pub pretrain_diffusion_only: bool,
    /// Deterministic policy rollouts per checkpoint for `eval_return`.
    pub eval_episodes: usize,
    /// Record elapsed seconds in the metrics; off keeps runs byte-identical.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvId::MountainCar,
            seed: 0,
            steps: 500,
            checkpoint_every: 100,
            batch_size: 128,
            lr: 3e-4,
            max_grad_norm: 100.0,
            gamma: 0.99,
            n_samples: 32,
            value_states: 8,
            reward_updates: 1,
            alpha_ent: 0.05,
            bc_coef: 0.1,
            diffusion_steps: 128,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden: vec![256, 256],
            reward_hidden: vec![256, 256],
            policy_hidden: vec![256, 256],
            time_embed_dim: 16,
            policy_dim: 16,
            policy_mode: None,
            window_max: dvf_core::occupancy::DEFAULT_WINDOW_MAX,
            condition_on_next: false,
            pretrain_diffusion_only: false,
            eval_episodes: 0,
            wall_clock: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Format {
                path: path.to_path_buf(),
                message: m,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all representable in TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        if self.reward_updates == 0 {
            return fail("reward_updates must be positive".into());
        }
        if self.n_samples == 0 {
            return fail("n_samples must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.max_grad_norm > 0.0) {
            return fail("max_grad_norm must be positive".into());
        }
        if self.diffusion_steps == 0 {
            return fail("diffusion_steps must be positive".into());
        }
        if !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return fail(format!("beta range [{}, {}] is not inside (0, 1)", self.beta_start, self.beta_end));
        }
        if self.alpha_ent < 0.0 || self.bc_coef < 0.0 {
            return fail("alpha_ent and bc_coef must be non-negative".into());
        }
        for (name, h) in [("hidden", &self.hidden), ("reward_hidden", &self.reward_hidden), ("policy_hidden", &self.policy_hidden)] {
            if h.is_empty() || h.contains(&0) {
                return fail(format!("{name} needs at least one nonzero layer width"));
            }
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return fail("time_embed_dim must be even and positive".into());
        }
        if self.policy_dim == 0 {
            return fail("policy_dim must be positive".into());
        }
        if self.window_max == 0 {
            return fail("window_max must be positive".into());
        }
        Ok(())
    }
}

/// Output layout of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(self.checkpoints()).map_err(|e| HarnessError::io(&self.root, e))
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step_{step:06}.dvf"))
    }

    pub fn diagnostic(&self) -> PathBuf {
        self.root.join("diagnostic.txt")
    }

    /// Checkpoint files in step order.
    pub fn list_checkpoints(&self) -> Result<Vec<(usize, PathBuf)>> {
        let dir = self.checkpoints();
        let entries = std::fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| HarnessError::io(&dir, e))?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step_"))
                .and_then(|n| n.strip_suffix(".dvf"))
                .and_then(|n| n.parse().ok());
            if let Some(step) = step {
                out.push((step, path));
            }
        }
        out.sort();
        Ok(out)
    }
}
