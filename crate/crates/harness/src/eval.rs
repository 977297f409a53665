//! Post-training studies over saved bundles.

use std::cell::RefCell;
use std::sync::Arc;

use dvf_core::diffusion::{sample_batch, Conditioning};
use dvf_core::envs::{rollout, Controller, Env, GeodesicField, MazeSpec};
use dvf_core::occupancy::{sample_delta_t, Dataset, Normalizer, PolicyContext};
use dvf_core::value::{estimate_v, ActionSource, DiffusionSampler, FutureSampler, Horizon, RewardFn};
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::config::EnvId;
use crate::envs::{behaviour_policies, maze_spec, AnyEnv};
use crate::error::{HarnessError, Result};

/// Pearson correlation. `None` when either side has zero variance; fewer
/// than three points is refused.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(HarnessError::Refused(format!("{} x values against {} y values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(HarnessError::Refused(format!("correlation needs at least 3 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Z-scores; constant input maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| if sd > 0.0 { (v - m) / sd } else { 0.0 }).collect()
}

pub fn format_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Behaviour-controller actions at normalized states.
struct ControllerActions<'a, C> {
    ctrl: RefCell<C>,
    normalizer: &'a Normalizer,
}

impl<C: Controller> ActionSource for ControllerActions<'_, C> {
    fn action(&self, state: &[f64], rng: &mut dyn RngCore) -> dvf_core::Result<Vec<f64>> {
        Ok(self.ctrl.borrow_mut().act(&self.normalizer.denormalize(state), rng))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub checkpoint: usize,
    pub episode: usize,
    pub t: usize,
    pub mc_return: f64,
    pub value: f64,
    pub future_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub points: Vec<CorrelationPoint>,
    /// Over all visited states pooled across checkpoints.
    pub r_returns_v: Option<f64>,
    pub r_v_reward: Option<f64>,
    /// Over per-checkpoint means.
    pub r_returns_v_means: Option<f64>,
    pub r_v_reward_means: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub env: EnvId,
    /// Behaviour checkpoints, in the order of their scalar policy index.
    pub checkpoints: usize,
    pub episodes_per_checkpoint: usize,
    /// Every `stride`-th visited state is scored.
    pub stride: usize,
    pub n_samples: usize,
    pub gamma: f64,
}

/// For every behaviour checkpoint `i`, rolls it out, and at visited states
/// compares the discounted Monte-Carlo return-to-go against the diffusion
/// value estimate conditioned on policy index `i`. The future-reward column
/// is the mean predicted reward over an independent set of sampled future
/// states.
pub fn eval_correlation<R: Rng>(bundle: &Bundle, spec: &CorrelationSpec, rng: &mut R) -> Result<CorrelationReport> {
    let reward = bundle
        .reward
        .as_ref()
        .ok_or_else(|| HarnessError::Config("bundle has no reward model".into()))?;
    if spec.checkpoints < 3 {
        return Err(HarnessError::Refused(format!("need at least 3 checkpoints, got {}", spec.checkpoints)));
    }
    if spec.stride == 0 || spec.episodes_per_checkpoint == 0 {
        return Err(HarnessError::Config("stride and episode count must be positive".into()));
    }
    let norm = &bundle.normalizer;
    let behaviours = behaviour_policies(spec.env, spec.checkpoints)?;
    let mut points = Vec::new();
    for (i, ctrl) in behaviours.into_iter().enumerate() {
        let sampler = DiffusionSampler {
            model: &bundle.denoiser,
            schedule: &bundle.schedule,
            policy: PolicyContext::Scalar(i as u32),
            next_state: None,
        };
        let actions = ControllerActions {
            ctrl: RefCell::new(ctrl.clone()),
            normalizer: norm,
        };
        let mut env = AnyEnv::new(spec.env);
        for episode in 0..spec.episodes_per_checkpoint {
            let mut c = ctrl.clone();
            let roll = rollout(&mut env, &mut c, rng);
            let returns = roll.returns_to_go(spec.gamma);
            let h = roll.rewards.len();
            for t in (0..h).step_by(spec.stride) {
                let s = norm.normalize(&roll.states[t]);
                let horizon = Horizon::Finite(h - t);
                let est = estimate_v(&s, &sampler, reward, &actions, spec.n_samples, spec.gamma, horizon, rng)?;
                let future = mean_future_reward(&s, &sampler, reward, &actions, spec.n_samples, spec.gamma, h - t, rng)?;
                points.push(CorrelationPoint {
                    checkpoint: i,
                    episode,
                    t,
                    mc_return: returns[t],
                    value: est.mean,
                    future_reward: future,
                });
            }
        }
    }
    let col = |f: fn(&CorrelationPoint) -> f64| points.iter().map(f).collect::<Vec<_>>();
    let (ret, val, fut) = (col(|p| p.mc_return), col(|p| p.value), col(|p| p.future_reward));
    let means = |xs: &[f64]| -> Vec<f64> {
        (0..spec.checkpoints)
            .map(|i| {
                let sel: Vec<f64> = points.iter().zip(xs).filter(|(p, _)| p.checkpoint == i).map(|(_, &x)| x).collect();
                sel.iter().sum::<f64>() / sel.len().max(1) as f64
            })
            .collect()
    };
    Ok(CorrelationReport {
        r_returns_v: pearson(&standardize(&ret), &standardize(&val))?,
        r_v_reward: pearson(&standardize(&val), &standardize(&fut))?,
        r_returns_v_means: pearson(&means(&ret), &means(&val))?,
        r_v_reward_means: pearson(&means(&val), &means(&fut))?,
        points,
    })
}

#[allow(clippy::too_many_arguments)]
fn mean_future_reward<S: FutureSampler, F: RewardFn, A: ActionSource, R: Rng>(
    state: &[f64],
    sampler: &S,
    reward: &F,
    actions: &A,
    n: usize,
    gamma: f64,
    remaining: usize,
    rng: &mut R,
) -> Result<f64> {
    let offsets: Vec<usize> = (0..n).map(|_| sample_delta_t(gamma, remaining, rng)).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.random());
    let futures = sampler.sample(state, &offsets, &mut rng)?;
    let mut total = 0.0;
    for s in &futures {
        let a = actions.action(s, &mut rng)?;
        total += reward.reward(s, &a)?;
    }
    Ok(total / n as f64)
}

/// A labelled cloud of raw 2-D positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn start_state(spec: &MazeSpec, norm: &Normalizer) -> Vec<f64> {
    let (x, y) = spec.start_position();
    norm.normalize(&[x, y, 0.0, 0.0])
}

fn maze_of(env: EnvId) -> Result<Arc<MazeSpec>> {
    maze_spec(env).ok_or_else(|| HarnessError::Config(format!("{env} is not a maze")))
}

/// Future positions of `s_0` under each policy id in the raw dataset: one
/// truncated-geometric offset per draw from a random episode's start.
pub fn ground_truth_futures<R: Rng + ?Sized>(
    raw: &Dataset,
    policies: &[u32],
    gamma: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SampleSet>> {
    policies
        .iter()
        .map(|&p| {
            let eps: Vec<_> = raw.episodes.iter().filter(|e| e.policy_id == p).collect();
            if eps.is_empty() {
                return Err(HarnessError::Config(format!("no episodes for policy {p}")));
            }
            let points = (0..n)
                .map(|_| {
                    let ep = eps[rng.random_range(0..eps.len())];
                    let s = &ep.states[sample_delta_t(gamma, ep.len(), rng)];
                    (s[0], s[1])
                })
                .collect();
            Ok(SampleSet {
                label: format!("policy {p}"),
                points,
            })
        })
        .collect()
}

/// Model samples of future positions from the maze start, one set per
/// policy index, over the dataset's episode horizon.
pub fn model_futures<R: Rng + ?Sized>(
    bundle: &Bundle,
    env: EnvId,
    policies: &[u32],
    gamma: f64,
    horizon: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SampleSet>> {
    let spec = maze_of(env)?;
    let s0 = start_state(&spec, &bundle.normalizer);
    policies
        .iter()
        .map(|&p| {
            let conds: Vec<Conditioning> = (0..n)
                .map(|_| Conditioning::new(s0.clone(), sample_delta_t(gamma, horizon, rng), PolicyContext::Scalar(p)))
                .collect();
            let xs = sample_batch(&bundle.denoiser, &conds, &bundle.schedule, rng)?;
            let points = xs
                .iter()
                .map(|x| {
                    let raw = bundle.normalizer.denormalize(x);
                    (raw[0], raw[1])
                })
                .collect();
            Ok(SampleSet {
                label: format!("policy {p}"),
                points,
            })
        })
        .collect()
}

/// Votes among the nearest reference points.
pub const KNN_K: usize = 7;

/// Nearest-cluster labelling by majority over the `KNN_K` closest
/// reference points, ties going to the label of the closest one.
pub fn classify(reference: &[SampleSet], p: (f64, f64)) -> usize {
    let mut dists: Vec<(f64, usize)> = reference
        .iter()
        .enumerate()
        .flat_map(|(label, set)| set.points.iter().map(move |q| ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2), label)))
        .collect();
    let k = KNN_K.min(dists.len());
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let mut near = dists[..k].to_vec();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut votes = vec![0usize; reference.len()];
    for &(_, l) in &near {
        votes[l] += 1;
    }
    let best = *votes.iter().max().expect("nonempty");
    near.iter().find(|(_, l)| votes[*l] == best).expect("winner present").1
}

/// Fraction of points in `sets[i]` labelled `i`.
pub fn separation_score(reference: &[SampleSet], sets: &[SampleSet]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, set) in sets.iter().enumerate() {
        for &p in &set.points {
            hits += (classify(reference, p) == i) as usize;
            total += 1;
        }
    }
    hits as f64 / total.max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub reference: Vec<SampleSet>,
    pub samples: Vec<SampleSet>,
    pub score: f64,
    /// Held-out ground-truth draws scored against the reference.
    pub ground_truth_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeEvalSpec {
    pub env: EnvId,
    pub gamma: f64,
    pub n_per_index: usize,
    pub reference_per_index: usize,
}

pub fn eval_maze_conditioning<R: Rng + ?Sized>(
    bundle: &Bundle,
    raw: &Dataset,
    spec: &MazeEvalSpec,
    rng: &mut R,
) -> Result<SeparationReport> {
    let policies = raw.policy_ids();
    let horizon = raw.episodes.iter().map(|e| e.len()).max().unwrap_or(1);
    let reference = ground_truth_futures(raw, &policies, spec.gamma, spec.reference_per_index, rng)?;
    let held_out = ground_truth_futures(raw, &policies, spec.gamma, spec.n_per_index, rng)?;
    let samples = model_futures(bundle, spec.env, &policies, spec.gamma, horizon, spec.n_per_index, rng)?;
    Ok(SeparationReport {
        score: separation_score(&reference, &samples),
        ground_truth_score: separation_score(&reference, &held_out),
        reference,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSamples {
    pub gamma: f64,
    pub samples: SampleSet,
    pub mean_distance: f64,
}

/// Future samples from the start for each discount, pooled over the policy
/// indices in round-robin, with their mean geodesic distance from the start.
pub fn eval_gamma_sweep<R: Rng + ?Sized>(
    bundle: &Bundle,
    env: EnvId,
    gammas: &[f64],
    policies: &[u32],
    horizon: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<GammaSamples>> {
    if gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(HarnessError::Config("gammas must be sorted ascending".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
        return Err(HarnessError::Config(format!("gamma {g} outside [0, 1)")));
    }
    if policies.is_empty() || n == 0 {
        return Err(HarnessError::Config("need at least one policy and one sample".into()));
    }
    let spec = maze_of(env)?;
    let field = GeodesicField::new(spec.clone(), spec.start_position())?;
    let s0 = start_state(&spec, &bundle.normalizer);
    gammas
        .iter()
        .map(|&gamma| {
            let conds: Vec<Conditioning> = (0..n)
                .map(|i| {
                    let p = policies[i % policies.len()];
                    Conditioning::new(s0.clone(), sample_delta_t(gamma, horizon, rng), PolicyContext::Scalar(p))
                })
                .collect();
            let xs = sample_batch(&bundle.denoiser, &conds, &bundle.schedule, rng)?;
            let points: Vec<(f64, f64)> = xs
                .iter()
                .map(|x| {
                    let raw = bundle.normalizer.denormalize(x);
                    (raw[0], raw[1])
                })
                .collect();
            let mean_distance = points.iter().map(|&p| field.distance(p)).sum::<f64>() / n as f64;
            Ok(GammaSamples {
                gamma,
                samples: SampleSet {
                    label: format!("gamma {gamma}"),
                    points,
                },
                mean_distance,
            })
        })
        .collect()
}

/// Mean geodesic distance from the start of ground-truth futures, pooled
/// over every episode.
pub fn ground_truth_distance<R: Rng + ?Sized>(env: EnvId, raw: &Dataset, gamma: f64, n: usize, rng: &mut R) -> Result<f64> {
    let spec = maze_of(env)?;
    let field = GeodesicField::new(spec.clone(), spec.start_position())?;
    let sets = ground_truth_futures(raw, &raw.policy_ids(), gamma, n, rng)?;
    let pts: Vec<_> = sets.iter().flat_map(|s| s.points.iter().copied()).collect();
    Ok(pts.iter().map(|&p| field.distance(p)).sum::<f64>() / pts.len().max(1) as f64)
}

pub fn env_horizon(env: EnvId) -> usize {
    AnyEnv::new(env).horizon()
}
