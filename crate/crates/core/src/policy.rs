//! Tanh-squashed Gaussian policy, its entropy-regularized objective against
//! `Q = r + gamma V`, and a behaviour-cloning baseline.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{io_err, read_dim, read_f64s, read_mlp, write_f64s, write_mlp, write_u32};
use crate::nn::{accumulate_batch, clip_global_norm, AdamState, Mlp, MlpGrads};
use crate::occupancy::Normalizer;
use crate::reward::RewardModel;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const POLICY_MAGIC: [u8; 4] = *b"DVFP";

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u.abs();
    2.0 * (std::f64::consts::LN_2 - u.abs() - x.exp().ln_1p())
}

/// Reward (or Q) with its gradient with respect to the action.
pub trait ActionCritic: Sync {
    fn value_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl ActionCritic for RewardModel {
    fn value_and_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.predict_with_action_grad(state, action)
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub net: Mlp,
    state_dim: usize,
    action_dim: usize,
    bound: Vec<f64>,
    adam: AdamState,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.bound == other.bound && self.state_dim == other.state_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Pre-squash Gaussian draw `u = mean + std * z`.
    pub pre_squash: Vec<f64>,
}

/// Mean and clamped log-std heads for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Raw log-std was outside the clamp; its gradient is zero there.
    pub clamped: Vec<bool>,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, bound: Vec<f64>, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if bound.is_empty() || bound.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::Config("action bounds must be positive".into()));
        }
        let net = Mlp::new(state_dim, hidden, 2 * bound.len(), rng)?;
        Ok(Self::from_net(net, bound))
    }

    fn from_net(net: Mlp, bound: Vec<f64>) -> Self {
        let adam = AdamState::new(&net);
        Self {
            state_dim: net.input_dim(),
            action_dim: bound.len(),
            net,
            bound,
            adam,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn bound(&self) -> &[f64] {
        &self.bound
    }

    fn split(&self, out: &[f64]) -> Head {
        let a = self.action_dim;
        let raw = &out[a..];
        Head {
            mean: out[..a].to_vec(),
            log_std: raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            clamped: raw.iter().map(|&v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v)).collect(),
        }
    }

    pub fn head(&self, state: &[f64]) -> Result<Head> {
        Ok(self.split(&self.net.predict(state)?))
    }

    /// `tanh(mean) * bound`.
    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let h = self.head(state)?;
        Ok(h.mean.iter().zip(&self.bound).map(|(m, b)| m.tanh() * b).collect())
    }

    /// Squashed Gaussian action for a given standard normal draw `z`.
    pub fn action_from_noise(&self, head: &Head, z: &[f64]) -> ActionSample {
        let mut log_prob = 0.0;
        let mut action = Vec::with_capacity(self.action_dim);
        let mut pre_squash = Vec::with_capacity(self.action_dim);
        for j in 0..self.action_dim {
            let std = head.log_std[j].exp();
            let u = head.mean[j] + std * z[j];
            log_prob += -0.5 * z[j] * z[j] - head.log_std[j] - HALF_LN_2PI
                - log_one_minus_tanh_sq(u)
                - self.bound[j].ln();
            action.push(u.tanh() * self.bound[j]);
            pre_squash.push(u);
        }
        ActionSample {
            action,
            log_prob,
            pre_squash,
        }
    }

    /// Reparameterized draw with its log-density (including the tanh and
    /// bound change of variables).
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<ActionSample> {
        let head = self.head(state)?;
        let z: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(self.action_from_noise(&head, &z))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&POLICY_MAGIC).map_err(io_err)?;
        write_u32(w, self.action_dim as u32)?;
        write_f64s(w, &self.bound)?;
        write_mlp(w, &self.net)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        crate::nn::checkpoint::expect_magic(r, &POLICY_MAGIC)?;
        let action_dim = read_dim(r, "action dim")?;
        let bound = read_f64s(r, action_dim)?;
        let net = read_mlp(r)?;
        if net.output_dim() != 2 * action_dim {
            return Err(Error::Checkpoint("policy network shape does not match its header".into()));
        }
        Ok(Self::from_net(net, bound))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyLossConfig {
    pub alpha_ent: f64,
    pub bc_coef: f64,
    pub gamma: f64,
}

impl Default for PolicyLossConfig {
    fn default() -> Self {
        Self {
            alpha_ent: 0.05,
            bc_coef: 0.1,
            gamma: 0.99,
        }
    }
}

/// Dataset states (normalized) with optional dataset actions and the
/// action-independent `V(s')` of each transition.
#[derive(Debug, Clone, Default)]
pub struct PolicyBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub v_next: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyLossStats {
    pub loss: f64,
    pub mean_q: f64,
    pub mean_log_prob: f64,
}

/// `mean[alpha log pi(a|s) - Q(s, a)] + bc * mean ||bound tanh(mean) - a_data||^2`
/// with `Q = r + gamma v_next`, for fixed noise draws `z`. The action
/// gradient of `Q` is the critic's; `v_next` is held fixed.
pub fn policy_loss_with_noise(
    policy: &Policy,
    batch: &PolicyBatch,
    critic: Option<&dyn ActionCritic>,
    cfg: &PolicyLossConfig,
    noise: &[Vec<f64>],
) -> Result<(PolicyLossStats, MlpGrads)> {
    let n = batch.states.len();
    if n == 0 {
        return Err(Error::Config("policy batch is empty".into()));
    }
    if cfg.bc_coef != 0.0 && batch.actions.is_none() {
        return Err(Error::Config("behaviour cloning needs dataset actions".into()));
    }
    if critic.is_some() && batch.v_next.len() != n {
        return Err(Error::shape("v_next", n, batch.v_next.len()));
    }
    let w = 1.0 / n as f64;
    let a_dim = policy.action_dim;
    let zero = || LossAccum {
        grads: policy.net.zero_grads(),
        sums: [0.0; 2],
    };
    let (loss, acc) = accumulate_batch(n, zero, |i, acc: &mut LossAccum| {
        let s = &batch.states[i];
        let (out, cache) = policy.net.forward(s)?;
        let head = policy.split(&out);
        let sample = policy.action_from_noise(&head, &noise[i]);
        let (q, dq) = match critic {
            Some(c) => {
                let (r, dr) = c.value_and_grad(s, &sample.action)?;
                (r + cfg.gamma * batch.v_next[i], dr)
            }
            None => (0.0, vec![0.0; a_dim]),
        };
        let mut loss = cfg.alpha_ent * sample.log_prob - q;
        let mut grad = vec![0.0; 2 * a_dim];
        for j in 0..a_dim {
            let b = policy.bound[j];
            let std = head.log_std[j].exp();
            let z = noise[i][j];
            let t = sample.pre_squash[j].tanh();
            let da_du = b * (1.0 - t * t);
            // d log pi / du = 2 tanh(u); du/dmean = 1, du/dlog_std = std z
            grad[j] += cfg.alpha_ent * 2.0 * t - dq[j] * da_du;
            if !head.clamped[j] {
                grad[a_dim + j] += cfg.alpha_ent * (-1.0 + 2.0 * t * std * z) - dq[j] * da_du * std * z;
            }
            if cfg.bc_coef != 0.0 {
                let a_data = batch.actions.as_ref().expect("checked above")[i][j];
                let tm = head.mean[j].tanh();
                let diff = b * tm - a_data;
                loss += cfg.bc_coef * diff * diff;
                grad[j] += cfg.bc_coef * 2.0 * diff * b * (1.0 - tm * tm);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("policy loss at batch state {i}")));
        }
        for v in grad.iter_mut() {
            *v *= w;
        }
        policy.net.backward_into(&cache, &grad, &mut acc.grads)?;
        acc.sums[0] += q * w;
        acc.sums[1] += sample.log_prob * w;
        Ok(loss * w)
    })?;
    Ok((
        PolicyLossStats {
            loss,
            mean_q: acc.sums[0],
            mean_log_prob: acc.sums[1],
        },
        acc.grads,
    ))
}

/// Gradients plus the running `[Q, log pi]` sums, reduced together.
struct LossAccum {
    grads: MlpGrads,
    sums: [f64; 2],
}

impl crate::nn::ParamTensors for LossAccum {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.grads.tensors();
        t.push(&self.sums);
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.grads.tensors_mut();
        t.push(&mut self.sums);
        t
    }
}

pub fn policy_loss<R: Rng + ?Sized>(
    policy: &Policy,
    batch: &PolicyBatch,
    critic: Option<&dyn ActionCritic>,
    cfg: &PolicyLossConfig,
    rng: &mut R,
) -> Result<(PolicyLossStats, MlpGrads)> {
    let noise: Vec<Vec<f64>> = (0..batch.states.len())
        .map(|_| (0..policy.action_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    policy_loss_with_noise(policy, batch, critic, cfg, &noise)
}

impl Policy {
    /// One clipped Adam step on [`policy_loss`].
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &PolicyBatch,
        critic: Option<&dyn ActionCritic>,
        cfg: &PolicyLossConfig,
        lr: f64,
        max_grad_norm: f64,
        rng: &mut R,
    ) -> Result<PolicyLossStats> {
        let (stats, mut grads) = policy_loss(self, batch, critic, cfg, rng)?;
        clip_global_norm(&mut grads, max_grad_norm);
        self.adam.step(&mut self.net, &grads, lr)?;
        Ok(stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
}

/// Regresses the deterministic action on dataset (state, action) pairs.
/// Returns the per-step loss curve.
pub fn bc_baseline_train<R: Rng + ?Sized>(
    policy: &mut Policy,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if states.is_empty() || states.len() != actions.len() {
        return Err(Error::shape("behaviour cloning pairs", states.len(), actions.len()));
    }
    let loss_cfg = PolicyLossConfig {
        alpha_ent: 0.0,
        bc_coef: 1.0,
        gamma: 0.0,
    };
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size.min(states.len()).max(1))
            .map(|_| rng.random_range(0..states.len()))
            .collect();
        let batch = PolicyBatch {
            states: idx.iter().map(|&i| states[i].clone()).collect(),
            actions: Some(idx.iter().map(|&i| actions[i].clone()).collect()),
            v_next: Vec::new(),
        };
        let stats = policy.train_step(&batch, None, &loss_cfg, cfg.lr, cfg.max_grad_norm, rng)?;
        curve.push(stats.loss);
    }
    Ok(curve)
}

/// Maps raw environment states to actions via the stored normalizer.
#[derive(Debug, Clone)]
pub struct PolicyEvaluator<'a> {
    pub policy: &'a Policy,
    pub normalizer: &'a Normalizer,
}

impl PolicyEvaluator<'_> {
    pub fn act(&self, raw_state: &[f64]) -> Result<Vec<f64>> {
        self.policy.deterministic_action(&self.normalizer.normalize(raw_state))
    }

    pub fn act_stochastic<R: Rng + ?Sized>(&self, raw_state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.policy.sample_action(&self.normalizer.normalize(raw_state), rng)?.action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamTensors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic {
        target: Vec<f64>,
    }

    impl ActionCritic for Quadratic {
        fn value_and_grad(&self, _: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
            let r = -a.iter().zip(&self.target).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
            Ok((r, a.iter().zip(&self.target).map(|(a, t)| -2.0 * (a - t)).collect()))
        }
    }

    fn states(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn tiny_std_gives_deterministic_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(2, vec![2.0], &[8], &mut rng).unwrap();
        let mut head = p.head(&[0.3, 0.1]).unwrap();
        head.log_std = vec![LOG_STD_MIN * 4.0];
        let s = p.action_from_noise(&head, &[1.5]);
        let det = p.deterministic_action(&[0.3, 0.1]).unwrap();
        assert!((s.action[0] - det[0]).abs() < 1e-8);
    }

    #[test]
    fn actions_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Policy::new(3, vec![0.5, 2.0], &[16], &mut rng).unwrap();
        // push the heads far out so squashing matters
        p.net.output_layer_mut().bias.copy_from_slice(&[30.0, -30.0, 2.0, 2.0]);
        for s in states(100_000, 3, &mut rng) {
            let a = p.sample_action(&s, &mut rng).unwrap();
            assert!(a.action[0].abs() <= 0.5 && a.action[1].abs() <= 2.0);
            assert!(a.log_prob.is_finite());
        }
    }

    #[test]
    fn log_prob_matches_histogram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Policy::new(1, vec![1.5], &[4], &mut rng).unwrap();
        p.net.output_layer_mut().weight.values_mut().fill(0.0);
        p.net.output_layer_mut().bias.copy_from_slice(&[0.4, -0.3]);
        let n = 100_000;
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let a = p.sample_action(&[0.0], &mut rng).unwrap().action[0];
            let k = (((a + 1.5) / 3.0) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        // density at bin centres from the analytic log-prob
        let head = p.head(&[0.0]).unwrap();
        let width = 3.0 / bins as f64;
        for (k, &c) in counts.iter().enumerate().skip(2).take(bins - 4) {
            let a = -1.5 + (k as f64 + 0.5) * width;
            let u = (a / 1.5).atanh();
            let z = (u - head.mean[0]) / head.log_std[0].exp();
            let density = p.action_from_noise(&head, &[z]).log_prob.exp();
            let empirical = c as f64 / (n as f64 * width);
            assert!((empirical - density).abs() / density < 0.03, "bin {k}: {empirical} vs {density}");
        }
    }

    fn check_gradient(critic: Option<&dyn ActionCritic>, cfg: PolicyLossConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = Policy::new(2, vec![1.0, 2.0], &[6, 6], &mut rng).unwrap();
        let batch = PolicyBatch {
            states: states(5, 2, &mut rng),
            actions: Some(states(5, 2, &mut rng)),
            v_next: vec![1.0, -2.0, 0.5, 3.0, 0.0],
        };
        let noise: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
        let (_, grads) = policy_loss_with_noise(&p, &batch, critic, &cfg, &noise).unwrap();
        let analytic = grads.tensors().concat();
        let h = 1e-5;
        let mut idx = 0;
        for ti in 0..p.net.tensors().len() {
            for k in 0..p.net.tensors()[ti].len() {
                let orig = p.net.tensors()[ti][k];
                p.net.tensors_mut()[ti][k] = orig + h;
                let up = policy_loss_with_noise(&p, &batch, critic, &cfg, &noise).unwrap().0.loss;
                p.net.tensors_mut()[ti][k] = orig - h;
                let dn = policy_loss_with_noise(&p, &batch, critic, &cfg, &noise).unwrap().0.loss;
                p.net.tensors_mut()[ti][k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let a = analytic[idx];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-6) < 1e-4, "{ti}/{k}: {a} vs {fd}");
                idx += 1;
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let q = Quadratic {
            target: vec![0.3, -1.0],
        };
        check_gradient(
            Some(&q),
            PolicyLossConfig {
                alpha_ent: 0.2,
                bc_coef: 0.5,
                gamma: 0.9,
            },
        );
    }

    #[test]
    fn gradient_through_reward_model_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = RewardModel::new(2, 2, &[8], &mut rng).unwrap();
        check_gradient(Some(&r), PolicyLossConfig::default());
    }

    #[test]
    fn v_next_shifts_loss_but_not_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Policy::new(2, vec![1.0], &[8], &mut rng).unwrap();
        let r = RewardModel::new(2, 1, &[8], &mut rng).unwrap();
        let mut batch = PolicyBatch {
            states: states(8, 2, &mut rng),
            actions: None,
            v_next: vec![0.0; 8],
        };
        let cfg = PolicyLossConfig {
            bc_coef: 0.0,
            ..Default::default()
        };
        let noise: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let (a, ga) = policy_loss_with_noise(&p, &batch, Some(&r), &cfg, &noise).unwrap();
        batch.v_next = vec![50.0; 8];
        let (b, gb) = policy_loss_with_noise(&p, &batch, Some(&r), &cfg, &noise).unwrap();
        assert!((a.loss - b.loss - cfg.gamma * 50.0).abs() < 1e-9);
        for (x, y) in ga.tensors().concat().iter().zip(gb.tensors().concat()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn entropy_pressure_raises_log_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = Policy::new(1, vec![1.0], &[16], &mut rng).unwrap();
        p.net.output_layer_mut().bias[1] = -3.0;
        let batch = PolicyBatch {
            states: states(64, 1, &mut rng),
            actions: None,
            v_next: vec![0.0; 64],
        };
        let cfg = PolicyLossConfig {
            alpha_ent: 10.0,
            bc_coef: 0.0,
            gamma: 0.0,
        };
        let before = p.head(&[0.0]).unwrap().log_std[0];
        for _ in 0..500 {
            p.train_step(&batch, None, &cfg, 1e-2, 100.0, &mut rng).unwrap();
        }
        let after = p.head(&[0.0]).unwrap().log_std[0];
        assert!(after > before + 2.0, "{before} -> {after}");
    }

    #[test]
    fn bc_memorizes_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = Policy::new(2, vec![1.0], &[16], &mut rng).unwrap();
        let cfg = BcConfig {
            steps: 1500,
            batch_size: 1,
            lr: 3e-3,
            max_grad_norm: 100.0,
        };
        let curve = bc_baseline_train(&mut p, &[vec![0.2, -0.4]], &[vec![0.6]], &cfg, &mut rng).unwrap();
        let a = p.deterministic_action(&[0.2, -0.4]).unwrap()[0];
        assert!((a - 0.6).abs() < 1e-3, "{a}");
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Policy::new(4, vec![1.0, 0.5], &[8], &mut rng).unwrap();
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(Policy::read(&mut buf.as_slice()).unwrap(), p);
    }
}
