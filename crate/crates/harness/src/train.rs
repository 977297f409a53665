//! The interleaved training loop: denoiser, reward model, value estimates
//! and policy updated once per minibatch.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dvf_core::diffusion::{diffusion_loss, Denoiser, DenoiserConfig, NoiseSchedule};
use dvf_core::envs::{rollout, Controller, Env};
use dvf_core::nn::{clip_global_norm, AdamState};
use dvf_core::occupancy::{Dataset, EmbeddingMode, Normalizer, PolicyContext, TupleSampler};
use dvf_core::policy::{Policy, PolicyBatch, PolicyEvaluator, PolicyLossConfig};
use dvf_core::reward::{RewardModel, RewardSample};
use dvf_core::value::{estimate_v, ActionSource, DiffusionSampler, Horizon};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::config::{RunConfig, RunDir};
use crate::envs::AnyEnv;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub diffusion_loss: f64,
    pub reward_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub mean_v: Option<f64>,
    pub eval_return: Option<f64>,
    pub wall_clock: f64,
}

pub const METRICS_HEADER: &str = "step,diffusion_loss,reward_loss,policy_loss,mean_v,eval_return,wall_clock";

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Append-only metrics file; rejects rows whose step does not increase.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<std::fs::File>,
    last: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner
            .write_record(METRICS_HEADER.split(','))
            .map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| HarnessError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
            last: None,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if self.last.is_some_and(|s| row.step <= s) {
            return Err(HarnessError::Config(format!("metrics step {} is not after {:?}", row.step, self.last)));
        }
        self.inner.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| HarnessError::io(&self.path, e))?;
        self.last = Some(row.step);
        Ok(())
    }
}

/// Policy actions at sampled future states, for value estimates.
pub struct PolicyActions<'a>(pub &'a Policy);

impl ActionSource for PolicyActions<'_> {
    fn action(&self, state: &[f64], rng: &mut dyn RngCore) -> dvf_core::Result<Vec<f64>> {
        Ok(self.0.sample_action(state, rng)?.action)
    }
}

/// Scalar ids when the dataset distinguishes several policies, pooled
/// rollout windows otherwise.
pub fn resolve_mode(config: &RunConfig, dataset: &Dataset) -> EmbeddingMode {
    config.policy_mode.unwrap_or(if dataset.policy_ids().len() > 1 {
        EmbeddingMode::Scalar
    } else {
        EmbeddingMode::Sequential
    })
}

pub fn denoiser_config(config: &RunConfig, state_dim: usize, mode: EmbeddingMode) -> DenoiserConfig {
    DenoiserConfig {
        state_dim,
        time_embed_dim: config.time_embed_dim,
        policy_dim: config.policy_dim,
        policy_mode: mode,
        window_max: config.window_max,
        condition_on_next: config.condition_on_next,
        hidden: config.hidden.clone(),
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub normalizer: Normalizer,
    /// Normalized copy of the training data.
    pub data: Dataset,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
    pub reward: Option<RewardModel>,
    pub policy: Option<Policy>,
    sampler: TupleSampler,
    denoiser_adam: AdamState,
    /// `(episode, t)` for every transition, for reward batches.
    transitions: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(config: RunConfig, raw: &Dataset) -> Result<Self> {
        config.validate()?;
        let updates_policy = !config.pretrain_diffusion_only;
        if updates_policy && !(raw.has_rewards && raw.has_actions()) {
            return Err(HarnessError::Config(
                "dataset lacks actions or rewards; use pretrain_diffusion_only for state-only data".into(),
            ));
        }
        let normalizer = Normalizer::fit(raw)?;
        let data = normalizer.normalize_dataset(raw);
        let mode = resolve_mode(&config, raw);
        let schedule = NoiseSchedule::linear(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let sampler = TupleSampler::new(&data, mode, config.window_max, config.gamma)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let denoiser = Denoiser::new(denoiser_config(&config, data.state_dim, mode), &mut rng)?;
        let denoiser_adam = AdamState::new(&denoiser);
        let (reward, policy) = if updates_policy {
            let env = AnyEnv::new(config.env);
            if env.state_dim() != data.state_dim || env.action_dim() != data.action_dim {
                return Err(HarnessError::Config(format!(
                    "dataset shape ({}, {}) does not match environment {}",
                    data.state_dim, data.action_dim, config.env
                )));
            }
            let reward = RewardModel::new(data.state_dim, data.action_dim, &config.reward_hidden, &mut rng)?;
            let policy = Policy::new(data.state_dim, env.action_bound(), &config.policy_hidden, &mut rng)?;
            (Some(reward), Some(policy))
        } else {
            (None, None)
        };
        let transitions = data
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
            .collect();
        Ok(Self {
            config,
            normalizer,
            data,
            schedule,
            denoiser,
            reward,
            policy,
            sampler,
            denoiser_adam,
            transitions,
            rng,
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn bundle(&self) -> Bundle {
        Bundle {
            step: self.step,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            schedule: self.schedule.clone(),
            denoiser: self.denoiser.clone(),
            reward: self.reward.clone(),
            policy: self.policy.clone(),
        }
    }

    /// One pass over a fresh minibatch.
    pub fn train_step(&mut self) -> Result<MetricsRow> {
        let cfg = &self.config;
        let tuples = self.sampler.sample(&self.data, cfg.batch_size, &mut self.rng);
        let batch: Vec<_> = tuples.iter().map(|(_, t)| t.clone()).collect();

        let (diffusion, mut grads) = diffusion_loss(&self.denoiser, &batch, &self.schedule, &mut self.rng)?;
        if !diffusion.is_finite() {
            return Err(dvf_core::Error::NonFinite("diffusion loss".into()).into());
        }
        clip_global_norm(&mut grads, cfg.max_grad_norm);
        self.denoiser_adam.step(&mut self.denoiser, &grads, cfg.lr)?;

        let (mut reward_loss, mut policy_loss, mut mean_v) = (None, None, None);
        if let (Some(reward), Some(policy)) = (self.reward.as_mut(), self.policy.as_mut()) {
            let mut total = 0.0;
            for _ in 0..cfg.reward_updates {
                let samples: Vec<RewardSample> = (0..cfg.batch_size)
                    .map(|_| {
                        let (e, t) = self.transitions[self.rng.random_range(0..self.transitions.len())];
                        let ep = &self.data.episodes[e];
                        RewardSample {
                            state: ep.states[t].clone(),
                            action: ep.actions.as_ref().expect("checked at construction")[t].clone(),
                            reward: ep.rewards.as_ref().expect("checked at construction")[t],
                        }
                    })
                    .collect();
                total += reward.train_step(&samples, cfg.lr, cfg.max_grad_norm)?;
            }
            reward_loss = Some(total / cfg.reward_updates as f64);

            // V(s_{t+1}) from diffusion samples, on the first few batch
            // states; the rest of the batch takes their mean. The policy
            // gradient only sees the reward term, so this sets the loss
            // level and the logged estimate, not the update direction.
            let n_value = cfg.value_states.min(tuples.len());
            let mut values = Vec::with_capacity(n_value);
            for (_, tuple) in &tuples[..n_value] {
                let sampler = DiffusionSampler {
                    model: &self.denoiser,
                    schedule: &self.schedule,
                    policy: tuple.policy.clone(),
                    next_state: None,
                };
                let remaining = tuple.episode_len - tuple.t - 1;
                let est = estimate_v(
                    &tuple.next_state,
                    &sampler,
                    &*reward,
                    &PolicyActions(policy),
                    cfg.n_samples,
                    cfg.gamma,
                    Horizon::Finite(remaining),
                    &mut self.rng,
                )?;
                values.push(est.mean);
            }
            let fill = if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            };
            mean_v = (!values.is_empty()).then_some(fill);
            let mut v_next = values;
            v_next.resize(tuples.len(), fill);

            let pbatch = PolicyBatch {
                states: tuples.iter().map(|(_, t)| t.state.clone()).collect(),
                actions: Some(
                    tuples
                        .iter()
                        .map(|(e, t)| self.data.episodes[*e].actions.as_ref().expect("checked")[t.t].clone())
                        .collect(),
                ),
                v_next,
            };
            let loss_cfg = PolicyLossConfig {
                alpha_ent: cfg.alpha_ent,
                bc_coef: cfg.bc_coef,
                gamma: cfg.gamma,
            };
            let stats = policy.train_step(&pbatch, Some(&*reward), &loss_cfg, cfg.lr, cfg.max_grad_norm, &mut self.rng)?;
            policy_loss = Some(stats.loss);
        }

        self.step += 1;
        Ok(MetricsRow {
            step: self.step,
            diffusion_loss: diffusion,
            reward_loss,
            policy_loss,
            mean_v,
            eval_return: None,
            wall_clock: 0.0,
        })
    }

    /// Mean undiscounted return of deterministic policy rollouts, on an RNG
    /// stream of its own so evaluation does not perturb training.
    pub fn eval_return(&self, episodes: usize) -> Result<Option<f64>> {
        let Some(policy) = &self.policy else {
            return Ok(None);
        };
        if episodes == 0 {
            return Ok(None);
        }
        let mut env = AnyEnv::new(self.config.env);
        let mut ctrl = Deterministic {
            eval: PolicyEvaluator {
                policy,
                normalizer: &self.normalizer,
            },
            error: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (self.step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut total = 0.0;
        for _ in 0..episodes {
            total += rollout(&mut env, &mut ctrl, &mut rng).total_reward();
            if let Some(e) = ctrl.error.take() {
                return Err(e.into());
            }
        }
        Ok(Some(total / episodes as f64))
    }
}

struct Deterministic<'a> {
    eval: PolicyEvaluator<'a>,
    error: Option<dvf_core::Error>,
}

impl Controller for Deterministic<'_> {
    fn act(&mut self, state: &[f64], _: &mut dyn RngCore) -> Vec<f64> {
        match self.eval.act(state) {
            Ok(a) => a,
            Err(e) => {
                let zero = vec![0.0; self.eval.policy.action_dim()];
                self.error.get_or_insert(e);
                zero
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs the configured step budget, writing `config.toml`, `metrics.csv`
/// and a bundle at step 0, every `checkpoint_every` steps and at the end.
/// On failure a diagnostic note and the last good state are left in the run
/// directory.
pub fn run_training(config: &RunConfig, raw: &Dataset, dir: &RunDir) -> Result<TrainSummary> {
    let mut trainer = Trainer::new(config.clone(), raw)?;
    dir.create()?;
    config.save(&dir.config())?;
    let mut metrics = MetricsWriter::create(&dir.metrics())?;
    let started = Instant::now();
    let mut summary = TrainSummary {
        rows: Vec::new(),
        checkpoints: Vec::new(),
    };
    let save = |trainer: &Trainer, summary: &mut TrainSummary| -> Result<()> {
        let path = dir.checkpoint(trainer.step_count());
        trainer.bundle().save(&path)?;
        summary.checkpoints.push(path);
        Ok(())
    };
    save(&trainer, &mut summary)?;
    for _ in 0..config.steps {
        let last_good = trainer.bundle();
        let mut row = match trainer.train_step() {
            Ok(row) => row,
            Err(e) => {
                write_diagnostic(dir, &last_good, summary.rows.last(), &e)?;
                return Err(e);
            }
        };
        let at_checkpoint = trainer.step_count() % config.checkpoint_every == 0 || trainer.step_count() == config.steps;
        if at_checkpoint {
            row.eval_return = trainer.eval_return(config.eval_episodes)?;
        }
        if config.wall_clock {
            row.wall_clock = started.elapsed().as_secs_f64();
        }
        metrics.append(&row)?;
        summary.rows.push(row);
        if at_checkpoint {
            save(&trainer, &mut summary)?;
        }
    }
    Ok(summary)
}

fn write_diagnostic(dir: &RunDir, last_good: &Bundle, last_row: Option<&MetricsRow>, err: &HarnessError) -> Result<()> {
    let path = dir.diagnostic();
    let mut f = std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
    writeln!(f, "failed at step {}: {err}", last_good.step + 1).map_err(|e| HarnessError::io(&path, e))?;
    if let Some(row) = last_row {
        writeln!(f, "last metrics: {row:?}").map_err(|e| HarnessError::io(&path, e))?;
    }
    let snapshot = dir.root.join("diagnostic.dvf");
    last_good.save(&snapshot)?;
    writeln!(f, "state before the failing step saved to {}", snapshot.display()).map_err(|e| HarnessError::io(&path, e))
}

/// Policy context stored for an episode of the normalized training data.
pub fn episode_context(trainer: &Trainer, episode: usize) -> &PolicyContext {
    trainer.sampler.context(episode)
}
