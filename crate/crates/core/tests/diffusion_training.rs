use dvf_core::diffusion::{
    diffusion_loss, diffusion_loss_with, sample_batch, sample_future_states, Conditioning, Denoiser, DenoiserConfig,
    NoiseDraws, NoiseSchedule,
};
use dvf_core::nn::{clip_global_norm, AdamState, ParamTensors};
use dvf_core::occupancy::{EmbeddingMode, OccupancyTuple, PolicyContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn point_mass_batch(target: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<OccupancyTuple> {
    (0..n)
        .map(|_| {
            let state: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            OccupancyTuple {
                next_state: state.clone(),
                state,
                future_state: target.to_vec(),
                delta_t: rng.random_range(1..40),
                policy: PolicyContext::Scalar(0),
                t: 0,
                episode_len: 40,
            }
        })
        .collect()
}

#[test]
fn trained_sampler_recovers_point_mass() {
    let target = [0.4, -0.6];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Scalar);
    cfg.hidden = vec![64, 64];
    let mut den = Denoiser::new(cfg, &mut rng).unwrap();
    let schedule = NoiseSchedule::linear(128, 1e-4, 0.02).unwrap();
    let mut adam = AdamState::new(&den);
    for _ in 0..1500 {
        let batch = point_mass_batch(&target, 64, &mut rng);
        let (_, mut g) = diffusion_loss(&den, &batch, &schedule, &mut rng).unwrap();
        clip_global_norm(&mut g, 100.0);
        adam.step(&mut den, &g, 1e-3).unwrap();
    }
    let cond = Conditioning::new(vec![0.1, 0.2], 10, PolicyContext::Scalar(0));
    let samples = sample_future_states(&den, &cond, 64, &schedule, &mut rng).unwrap();
    for d in 0..2 {
        let mean = samples.iter().map(|s| s[d]).sum::<f64>() / samples.len() as f64;
        assert!((mean - target[d]).abs() < 0.1, "dim {d}: mean {mean} vs {}", target[d]);
    }
}

#[test]
fn stepwise_forward_chain_matches_marginal() {
    let s = NoiseSchedule::linear(128, 1e-4, 0.02).unwrap();
    let x0 = [0.5, -1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [1usize, 16, 64, 128] {
        let draws = 10_000;
        let (mut sum, mut sq) = ([0.0; 2], [0.0; 2]);
        for _ in 0..draws {
            let mut x = x0.to_vec();
            for step in 1..=t {
                let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                x = s.forward_step(&x, step, &z).unwrap();
            }
            for d in 0..2 {
                sum[d] += x[d];
                sq[d] += x[d] * x[d];
            }
        }
        let ab = s.alpha_bar(t).unwrap();
        for d in 0..2 {
            let mean = sum[d] / draws as f64;
            let var = sq[d] / draws as f64 - mean * mean;
            assert!((mean - ab.sqrt() * x0[d]).abs() <= 0.02, "t={t} mean {mean}");
            assert!((var - (1.0 - ab)).abs() <= 0.05, "t={t} var {var}");
        }
    }
}

#[test]
fn alpha_bar_ratios_are_alphas() {
    let s = NoiseSchedule::linear(128, 1e-4, 0.02).unwrap();
    for t in 2..=128 {
        let ratio = s.alpha_bar(t).unwrap() / s.alpha_bar(t - 1).unwrap();
        assert!((ratio - s.alpha(t).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn loss_gradient_matches_finite_differences_on_toy_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Scalar);
    cfg.hidden = vec![6, 6];
    cfg.time_embed_dim = 4;
    cfg.policy_dim = 4;
    let den = Denoiser::new(cfg, &mut rng).unwrap();
    let schedule = NoiseSchedule::linear(16, 1e-3, 0.2).unwrap();
    let batch = point_mass_batch(&[0.2, 0.3], 5, &mut rng);
    let draws = NoiseDraws::sample(batch.len(), 2, &schedule, &mut rng);
    let (_, g) = diffusion_loss_with(&den, &batch, &schedule, &draws).unwrap();
    let analytic: Vec<f64> = g.tensors().into_iter().flatten().copied().collect();
    let sizes: Vec<usize> = den.tensors().iter().map(|t| t.len()).collect();
    let h = 1e-6;
    let mut numeric = Vec::new();
    for (ti, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let mut p = den.clone();
            p.tensors_mut()[ti][i] += h;
            let mut m = den.clone();
            m.tensors_mut()[ti][i] -= h;
            let lp = diffusion_loss_with(&p, &batch, &schedule, &draws).unwrap().0;
            let lm = diffusion_loss_with(&m, &batch, &schedule, &draws).unwrap().0;
            numeric.push((lp - lm) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().chain(&numeric).map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
}

#[test]
fn batch_sampling_costs_n_times_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cfg = DenoiserConfig::new(2, EmbeddingMode::Scalar);
    cfg.hidden = vec![8];
    let den = Denoiser::new(cfg, &mut rng).unwrap();
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
    let conds: Vec<Conditioning> = (0..13)
        .map(|i| Conditioning::new(vec![0.0, 0.1], 1 + 37 * i, PolicyContext::Scalar(i as u32 % 3)))
        .collect();
    den.reset_evaluations();
    let out = sample_batch(&den, &conds, &schedule, &mut rng).unwrap();
    assert_eq!(out.len(), 13);
    assert_eq!(den.evaluations(), 13 * 20);
}
