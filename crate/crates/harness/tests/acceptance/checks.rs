use std::sync::{Arc, OnceLock};

use dvf_core::diffusion::{
    diffusion_loss_with, sample_future_states, Conditioning, Denoiser, DenoiserConfig, NoiseDraws, NoiseSchedule,
};
use dvf_core::envs::MazeSpec;
use dvf_core::nn::{Mlp, ParamTensors};
use dvf_core::occupancy::tuples::sample_delta_t;
use dvf_core::occupancy::{make_tuples, Dataset, EmbeddingMode, EpisodeRecord, PolicyContext, PolicyWindow};
use dvf_core::policy::{policy_loss_with_noise, ActionCritic, Policy, PolicyBatch, PolicyLossConfig};
use dvf_core::reward::{symexp, symlog, RewardModel, RewardSample};
use dvf_core::value::{estimate_v, horizon_factor, q_with_action_grad, DiffusionSampler, Horizon, NoAction};
use dvf_harness::envs::{collect, CollectSpec};
use dvf_harness::eval::{
    self, eval_correlation, eval_gamma_sweep, eval_maze_conditioning, format_r, CorrelationSpec, MazeEvalSpec,
};
use dvf_harness::{run_training, Bundle, EnvId, RunConfig, RunDir, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub enum Outcome {
    Pass(String),
    Fail(String),
}

type CheckResult = Result<Outcome, String>;

pub const CHECKS: &[(usize, &str)] = &[
    (1, "Mountain Car returns/value correlation"),
    (2, "maze policy separation"),
    (3, "discount sweep monotonicity"),
    (4, "constant-cost sampling"),
    (5, "tabular chain oracle"),
    (6, "invariant suites"),
    (7, "quadratic-reward policy recovery"),
];

pub fn run_check(id: usize) -> Outcome {
    let res = match id {
        1 => correlation_study(),
        2 => maze_separation(),
        3 => gamma_sweep(),
        4 => constant_cost_sampling(),
        5 => tabular_chain(),
        6 => invariant_suites(),
        7 => quadratic_policy_recovery(),
        _ => Err(format!("unknown check {id}")),
    };
    res.unwrap_or_else(Outcome::Fail)
}

fn verdict(ok: bool, detail: String) -> CheckResult {
    Ok(if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn scratch_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("dvf-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// ---------------------------------------------------------------------------
// 1. correlation study

/// Desk-scale Mountain Car run: narrower networks, and extra reward-model
/// updates so the rare goal bonus is fitted within the step budget.
fn mountain_car_config() -> RunConfig {
    RunConfig {
        env: EnvId::MountainCar,
        seed: 11,
        steps: 500,
        hidden: vec![128, 128],
        reward_hidden: vec![128, 128],
        policy_hidden: vec![64, 64],
        reward_updates: 16,
        ..RunConfig::default()
    }
}

fn correlation_study() -> CheckResult {
    const POLICIES: usize = 5;
    let spec = CollectSpec {
        env: EnvId::MountainCar,
        policies: POLICIES,
        episodes_per_policy: 20,
        include_actions: true,
        include_rewards: true,
    };
    let raw = collect(&spec, &mut ChaCha8Rng::seed_from_u64(1)).map_err(err)?;
    let cfg = mountain_car_config();
    let dir = RunDir::new(scratch_dir("mountain-car"));
    let summary = run_training(&cfg, &raw, &dir).map_err(err)?;
    let finite = summary.rows.iter().all(|r| {
        r.diffusion_loss.is_finite()
            && r.reward_loss.is_some_and(f64::is_finite)
            && r.policy_loss.is_some_and(f64::is_finite)
    });
    let last = summary.checkpoints.last().ok_or("no checkpoint written")?;
    let bundle = Bundle::load(last).map_err(err)?;
    let corr = CorrelationSpec {
        env: EnvId::MountainCar,
        checkpoints: POLICIES,
        episodes_per_checkpoint: 2,
        stride: 25,
        n_samples: cfg.n_samples,
        gamma: cfg.gamma,
    };
    let report = eval_correlation(&bundle, &corr, &mut ChaCha8Rng::seed_from_u64(2)).map_err(err)?;
    let _ = std::fs::remove_dir_all(&dir.root);
    let rv = report.r_returns_v.unwrap_or(f64::NAN);
    let vr = report.r_v_reward.unwrap_or(f64::NAN);
    verdict(
        finite && summary.rows.len() == 500 && rv > 0.5 && vr > 0.5,
        format!(
            "r(returns, V) = {}, r(V, future reward) = {} over {} states [checkpoint means: {}, {}]; losses finite: {finite}",
            format_r(report.r_returns_v),
            format_r(report.r_v_reward),
            report.points.len(),
            format_r(report.r_returns_v_means),
            format_r(report.r_v_reward_means),
        ),
    )
}

// ---------------------------------------------------------------------------
// 2-3. maze studies

struct MazeModel {
    raw: Dataset,
    trained: Bundle,
    untrained: Bundle,
}

fn maze_config(env: EnvId, steps: usize) -> RunConfig {
    RunConfig {
        env,
        seed: 5,
        steps,
        lr: 1e-3,
        hidden: vec![256, 256],
        pretrain_diffusion_only: true,
        policy_mode: Some(EmbeddingMode::Scalar),
        ..RunConfig::default()
    }
}

fn train_maze(env: EnvId, episodes: usize, steps: usize) -> Result<MazeModel, String> {
    let spec = CollectSpec {
        env,
        policies: 0,
        episodes_per_policy: episodes,
        include_actions: false,
        include_rewards: false,
    };
    let raw = collect(&spec, &mut ChaCha8Rng::seed_from_u64(3)).map_err(err)?;
    let mut trainer = Trainer::new(maze_config(env, steps), &raw).map_err(err)?;
    let untrained = trainer.bundle();
    for _ in 0..steps {
        trainer.train_step().map_err(err)?;
    }
    Ok(MazeModel {
        raw,
        trained: trainer.bundle(),
        untrained,
    })
}

fn u_maze() -> &'static Result<MazeModel, String> {
    static CELL: OnceLock<Result<MazeModel, String>> = OnceLock::new();
    CELL.get_or_init(|| train_maze(EnvId::UMaze, 30, 6000))
}

fn large_maze() -> &'static Result<MazeModel, String> {
    static CELL: OnceLock<Result<MazeModel, String>> = OnceLock::new();
    CELL.get_or_init(|| train_maze(EnvId::LargeMaze, 30, 6000))
}

fn in_box(spec: &MazeSpec, pts: &[(f64, f64)]) -> bool {
    pts.iter()
        .all(|&(x, y)| (0.0..=spec.cols() as f64).contains(&x) && (0.0..=spec.rows() as f64).contains(&y))
}

fn maze_separation() -> CheckResult {
    let mut ok = true;
    let mut parts = Vec::new();
    for (env, model, threshold, spec) in [
        (EnvId::UMaze, u_maze(), 0.8, MazeSpec::u_maze()),
        (EnvId::LargeMaze, large_maze(), 0.6, MazeSpec::large_maze()),
    ] {
        let m = model.as_ref().map_err(Clone::clone)?;
        let eval_spec = MazeEvalSpec {
            env,
            gamma: 0.99,
            n_per_index: 300,
            reference_per_index: 2000,
        };
        let trained = eval_maze_conditioning(&m.trained, &m.raw, &eval_spec, &mut ChaCha8Rng::seed_from_u64(7)).map_err(err)?;
        let chance = eval_maze_conditioning(&m.untrained, &m.raw, &eval_spec, &mut ChaCha8Rng::seed_from_u64(7)).map_err(err)?;
        let boxed = trained.samples.iter().all(|s| in_box(&spec, &s.points));
        let pass = trained.score >= threshold && (chance.score - 1.0 / 3.0).abs() < 0.05 && boxed;
        ok &= pass;
        parts.push(format!(
            "{env}: {:.3} (need {threshold}, ground truth {:.3}, untrained {:.3}, in bounds {boxed})",
            trained.score, trained.ground_truth_score, chance.score
        ));
    }
    verdict(ok, parts.join("; "))
}

fn gamma_sweep() -> CheckResult {
    let m = large_maze().as_ref().map_err(Clone::clone)?;
    let gammas = [0.0, 0.5, 0.9, 0.99];
    let sweep = eval_gamma_sweep(
        &m.trained,
        EnvId::LargeMaze,
        &gammas,
        &[0, 1, 2],
        eval::env_horizon(EnvId::LargeMaze),
        300,
        &mut ChaCha8Rng::seed_from_u64(9),
    )
    .map_err(err)?;
    let d: Vec<f64> = sweep.iter().map(|g| g.mean_distance).collect();
    let counts = sweep.iter().all(|g| g.samples.points.len() == 300);
    let monotone = d[1..].windows(2).all(|w| w[0] <= w[1]);
    let ratio = d[3] / d[1];
    verdict(
        monotone && ratio >= 2.0 && d[0] < 2.0 && counts,
        format!(
            "mean geodesic distance {} ; 0.99/0.5 ratio {ratio:.2}",
            gammas
                .iter()
                .zip(&d)
                .map(|(g, d)| format!("gamma {g}: {d:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. sampling cost

fn constant_cost_sampling() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Scalar);
    cfg.hidden = vec![32, 32];
    let d = Denoiser::new(cfg, &mut rng).map_err(err)?;
    let schedule = NoiseSchedule::linear(128, 1e-4, 0.02).map_err(err)?;
    let n = 32;
    let mut counts = Vec::new();
    for dt in [1usize, 50, 500] {
        d.reset_evaluations();
        let cond = Conditioning::new(vec![0.1, -0.2], dt, PolicyContext::Scalar(1));
        sample_future_states(&d, &cond, n, &schedule, &mut rng).map_err(err)?;
        counts.push(d.evaluations());
    }
    let expected = (n * schedule.steps()) as u64;
    verdict(
        counts.iter().all(|&c| c == expected),
        format!("evaluations for dt 1/50/500: {counts:?}, expected {expected} each"),
    )
}

// ---------------------------------------------------------------------------
// 5. tabular chain

const CHAIN_REWARD: [f64; 3] = [1.0, 0.0, 2.0];

/// Exact `V(s) = sum_{k>=1} gamma^{k-1} r(s_{t+k})` on the cycle
/// 0 -> 1 -> 2 -> 0, by value iteration on `V(s) = r(s') + gamma V(s')`.
fn chain_dp(gamma: f64) -> [f64; 3] {
    let mut v = [0.0; 3];
    for _ in 0..10_000 {
        let mut next = [0.0; 3];
        for s in 0..3 {
            let s2 = (s + 1) % 3;
            next[s] = CHAIN_REWARD[s2] + gamma * v[s2];
        }
        v = next;
    }
    v
}

fn tabular_chain() -> CheckResult {
    let len = 80;
    let episodes = (0..30u64)
        .map(|e| {
            let states = (0..=len).map(|k| vec![((e as usize + k) % 3) as f64]).collect();
            EpisodeRecord::new(e, 0, states, None, None)
        })
        .collect::<dvf_core::Result<Vec<_>>>()
        .map_err(err)?;
    let raw = Dataset::new(episodes).map_err(err)?;
    let cfg = RunConfig {
        seed: 3,
        steps: 3000,
        lr: 1e-3,
        gamma: 0.9,
        hidden: vec![128, 128],
        pretrain_diffusion_only: true,
        policy_mode: Some(EmbeddingMode::Scalar),
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), &raw).map_err(err)?;
    for _ in 0..cfg.steps {
        trainer.train_step().map_err(err)?;
    }
    let norm = trainer.normalizer.clone();
    let reward = move |x: &[f64], _: &[f64]| {
        let s = norm.denormalize(x)[0].round().clamp(0.0, 2.0) as usize;
        CHAIN_REWARD[s]
    };
    let sampler = DiffusionSampler {
        model: &trainer.denoiser,
        schedule: &trainer.schedule,
        policy: PolicyContext::Scalar(0),
        next_state: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for gamma in [0.5, 0.9] {
        let exact = chain_dp(gamma);
        for s in 0..3 {
            let x = trainer.normalizer.normalize(&[s as f64]);
            let est = estimate_v(&x, &sampler, &reward, &NoAction, 2000, gamma, Horizon::Infinite, &mut rng).map_err(err)?;
            let rel = (est.mean - exact[s]).abs() / exact[s].abs();
            worst = worst.max(rel);
            parts.push(format!("g{gamma} s{s}: {:.3} vs {:.3}", est.mean, exact[s]));
        }
    }
    verdict(worst <= 0.10, format!("worst relative error {worst:.3} ({})", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 6. invariant suites

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `loss` over every parameter of `params`.
fn numeric_grad<P: ParamTensors + Clone>(params: &P, loss: impl Fn(&P) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut out = Vec::new();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= h;
            out.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
    }
    out
}

fn flat<P: ParamTensors>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn gradient_checks() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;

    // dense network, weighted-sum loss
    let net = Mlp::new(7, &[6, 5], 3, &mut rng).map_err(err)?;
    let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = [0.7, -1.3, 0.4];
    let (_, cache) = net.forward(&x).map_err(err)?;
    let (grads, _) = net.backward(&cache, &w).map_err(err)?;
    let num = numeric_grad(&net, |n| n.predict(&x).unwrap().iter().zip(&w).map(|(o, w)| o * w).sum());
    worst = worst.max(rel_err(&flat(&grads), &num));

    // diffusion loss with a sequential encoder and next-state conditioning
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Sequential);
    cfg.hidden = vec![6, 6];
    cfg.time_embed_dim = 4;
    cfg.policy_dim = 4;
    cfg.window_max = 4;
    cfg.condition_on_next = true;
    let den = Denoiser::new(cfg, &mut rng).map_err(err)?;
    let states: Vec<Vec<f64>> = (0..9).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ctx = PolicyContext::Window(Arc::new(PolicyWindow::from_rollout(&states, 4).map_err(err)?));
    let batch = make_tuples(&states, &ctx, 0.8, 4, &mut rng).map_err(err)?;
    let schedule = NoiseSchedule::linear(10, 1e-3, 0.2).map_err(err)?;
    let draws = NoiseDraws::sample(batch.len(), 2, &schedule, &mut rng);
    let (_, g) = diffusion_loss_with(&den, &batch, &schedule, &draws).map_err(err)?;
    let num = numeric_grad(&den, |d| diffusion_loss_with(d, &batch, &schedule, &draws).unwrap().0);
    worst = worst.max(rel_err(&flat(&g), &num));

    // reward regression
    let rm = RewardModel::new(2, 1, &[5, 5], &mut rng).map_err(err)?;
    let samples: Vec<RewardSample> = (0..6)
        .map(|_| RewardSample {
            state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            action: vec![rng.random_range(-1.0..1.0)],
            reward: rng.random_range(-20.0..20.0),
        })
        .collect();
    let (_, g) = rm.loss_and_grads(&samples).map_err(err)?;
    let num = numeric_grad(&rm.net, |n| {
        let mut m = rm.clone();
        m.net = n.clone();
        m.loss_and_grads(&samples).unwrap().0
    });
    worst = worst.max(rel_err(&flat(&g), &num));

    // policy surrogate against the learned reward as critic
    let policy = Policy::new(2, vec![1.0], &[5, 5], &mut rng).map_err(err)?;
    let pbatch = PolicyBatch {
        states: samples.iter().map(|s| s.state.clone()).collect(),
        actions: Some(samples.iter().map(|s| s.action.clone()).collect()),
        v_next: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let noise: Vec<Vec<f64>> = (0..6).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let lcfg = PolicyLossConfig::default();
    let (_, g) = policy_loss_with_noise(&policy, &pbatch, Some(&rm), &lcfg, &noise).map_err(err)?;
    let num = numeric_grad(&policy.net, |n| {
        let mut p = policy.clone();
        p.net = n.clone();
        policy_loss_with_noise(&p, &pbatch, Some(&rm), &lcfg, &noise).unwrap().0.loss
    });
    worst = worst.max(rel_err(&flat(&g), &num));

    Ok((worst < 1e-4, format!("gradients rel err {worst:.1e}")))
}

fn forward_marginals() -> Result<(bool, String), String> {
    let s = NoiseSchedule::linear(128, 1e-4, 0.02).map_err(err)?;
    let x0 = [0.6, -0.8];
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let (mut worst_mean, mut worst_var): (f64, f64) = (0.0, 0.0);
    for &t in &[1usize, 32, 128] {
        let draws = 8000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..draws {
            let mut x = x0.to_vec();
            for step in 1..=t {
                let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                x = s.forward_step(&x, step, &z).map_err(err)?;
            }
            for d in 0..2 {
                sum[d] += x[d];
                sq[d] += x[d] * x[d];
            }
        }
        let ab = s.alpha_bar(t).map_err(err)?;
        for d in 0..2 {
            let mean = sum[d] / draws as f64;
            let var = sq[d] / draws as f64 - mean * mean;
            worst_mean = worst_mean.max((mean - ab.sqrt() * x0[d]).abs());
            worst_var = worst_var.max((var - (1.0 - ab)).abs());
        }
    }
    Ok((
        worst_mean <= 0.02 && worst_var <= 0.05,
        format!("marginal mean err {worst_mean:.4}, var err {worst_var:.4}"),
    ))
}

fn truncated_geometric_chi_square() -> Result<(bool, String), String> {
    let (gamma, k, n) = (0.9f64, 20usize, 20_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[sample_delta_t(gamma, k, &mut rng) - 1] += 1;
    }
    let z = (1.0 - gamma.powi(k as i32)) / (1.0 - gamma);
    let chi: f64 = (1..=k)
        .map(|d| {
            let e = n as f64 * gamma.powi(d as i32 - 1) / z;
            (counts[d - 1] as f64 - e).powi(2) / e
        })
        .sum();
    // chi-square 99th percentile at 19 degrees of freedom
    let critical = 36.191;
    Ok((chi < critical, format!("chi-square {chi:.2} < {critical}")))
}

fn symlog_round_trip() -> (bool, String) {
    let mut worst: f64 = 0.0;
    for i in -600..=600 {
        let x = 10f64.powf(i as f64 / 100.0);
        for v in [x, -x] {
            worst = worst.max((symexp(symlog(v)) - v).abs() / v.abs().max(1.0));
        }
    }
    (worst <= 1e-12, format!("symlog round trip {worst:.1e}"))
}

fn horizon_cases() -> (bool, String) {
    let ok = horizon_factor(0.5, 2) == 1.5
        && horizon_factor(0.5, 3) == 1.75
        && horizon_factor(0.0, 7) == 1.0
        && horizon_factor(0.9, 0) == 0.0
        && horizon_factor(0.3, 1) == 1.0
        && Horizon::Infinite.factor(0.75) == 4.0;
    (ok, format!("horizon factors exact: {ok}"))
}

fn constant_reward_value() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Scalar);
    cfg.hidden = vec![8];
    let den = Denoiser::new(cfg, &mut rng).map_err(err)?;
    let schedule = NoiseSchedule::linear(8, 1e-3, 0.1).map_err(err)?;
    let sampler = DiffusionSampler {
        model: &den,
        schedule: &schedule,
        policy: PolicyContext::Scalar(0),
        next_state: None,
    };
    let c = 0.3;
    let mut ok = true;
    for (gamma, k) in [(0.9, 50usize), (0.99, 999), (0.5, 1)] {
        let est = estimate_v(&[0.2, 0.1], &sampler, &|_: &[f64], _: &[f64]| c, &NoAction, 16, gamma, Horizon::Finite(k), &mut rng)
            .map_err(err)?;
        ok &= est.mean == c * horizon_factor(gamma, k);
    }
    Ok((ok, format!("constant-reward V exact: {ok}")))
}

fn action_gradient_identity() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let rm = RewardModel::new(3, 2, &[16, 16], &mut rng).map_err(err)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = rng.random_range(-50.0..50.0);
        let (_, gq) = q_with_action_grad(&rm, &s, &a, v, 0.99).map_err(err)?;
        let (_, gr) = rm.predict_with_action_grad(&s, &a).map_err(err)?;
        for (x, y) in gq.iter().zip(&gr) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst <= 1e-10, format!("grad_a Q - grad_a r max {worst:.1e}")))
}

fn pipeline_determinism() -> Result<(bool, String), String> {
    let run = |tag: &str| -> Result<(String, Vec<u8>, Vec<Vec<u8>>, String), String> {
        let spec = CollectSpec {
            env: EnvId::MountainCar,
            policies: 3,
            episodes_per_policy: 2,
            include_actions: true,
            include_rewards: true,
        };
        let raw = collect(&spec, &mut ChaCha8Rng::seed_from_u64(66)).map_err(err)?;
        let cfg = RunConfig {
            steps: 6,
            checkpoint_every: 3,
            batch_size: 32,
            n_samples: 4,
            value_states: 2,
            diffusion_steps: 8,
            hidden: vec![16, 16],
            reward_hidden: vec![16],
            policy_hidden: vec![16],
            eval_episodes: 1,
            ..RunConfig::default()
        };
        let dir = RunDir::new(scratch_dir(&format!("determinism-{tag}")));
        let summary = run_training(&cfg, &raw, &dir).map_err(err)?;
        let metrics = std::fs::read(dir.metrics()).map_err(err)?;
        let ckpts = summary
            .checkpoints
            .iter()
            .map(|p| std::fs::read(p).map_err(err))
            .collect::<Result<Vec<_>, _>>()?;
        let bundle = Bundle::load(summary.checkpoints.last().unwrap()).map_err(err)?;
        let corr = CorrelationSpec {
            env: EnvId::MountainCar,
            checkpoints: 3,
            episodes_per_checkpoint: 1,
            stride: 200,
            n_samples: 4,
            gamma: 0.99,
        };
        let report = eval_correlation(&bundle, &corr, &mut ChaCha8Rng::seed_from_u64(67)).map_err(err)?;
        let _ = std::fs::remove_dir_all(&dir.root);
        Ok((raw.to_text(), metrics, ckpts, format!("{:?}", report.points)))
    };
    let a = run("a")?;
    let b = run("b")?;
    let ok = a == b;
    Ok((ok, format!("collect/train/eval bit-identical: {ok}")))
}

fn invariant_suites() -> CheckResult {
    let results = [
        gradient_checks()?,
        forward_marginals()?,
        truncated_geometric_chi_square()?,
        symlog_round_trip(),
        horizon_cases(),
        constant_reward_value()?,
        action_gradient_identity()?,
        pipeline_determinism()?,
    ];
    let ok = results.iter().all(|(ok, _)| *ok);
    let detail = results
        .iter()
        .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "FAILED " }))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(ok, detail)
}

// ---------------------------------------------------------------------------
// 7. quadratic reward

/// `r(s, a) = -||a - a*||^2`.
struct Quadratic;

const OPTIMUM: f64 = 0.5;

fn optimum(_: &[f64]) -> f64 {
    OPTIMUM
}

impl ActionCritic for Quadratic {
    fn value_and_grad(&self, s: &[f64], a: &[f64]) -> dvf_core::Result<(f64, Vec<f64>)> {
        let d = a[0] - optimum(s);
        Ok((-d * d, vec![-2.0 * d]))
    }
}

fn quadratic_policy_recovery() -> CheckResult {
    let lcfg = PolicyLossConfig {
        alpha_ent: 0.0,
        bc_coef: 0.0,
        gamma: 0.99,
    };
    let mut worst: f64 = 0.0;
    let mut passed = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut policy = Policy::new(2, vec![1.0], &[64, 64], &mut rng).map_err(err)?;
        for _ in 0..2000 {
            let states: Vec<Vec<f64>> = (0..128).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let batch = PolicyBatch {
                v_next: vec![0.0; states.len()],
                states,
                actions: None,
            };
            policy.train_step(&batch, Some(&Quadratic), &lcfg, 3e-4, 100.0, &mut rng).map_err(err)?;
        }
        let mut seed_worst: f64 = 0.0;
        for i in 0..21 {
            for j in 0..5 {
                let s = [-1.0 + 0.1 * i as f64, -1.0 + 0.5 * j as f64];
                let a = policy.deterministic_action(&s).map_err(err)?[0];
                seed_worst = seed_worst.max((a - optimum(&s)).abs());
            }
        }
        worst = worst.max(seed_worst);
        passed += (seed_worst <= 0.05) as usize;
    }
    verdict(passed == 5, format!("{passed}/5 seeds within 0.05; worst deviation {worst:.4}"))
}
