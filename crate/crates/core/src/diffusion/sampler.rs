//! Ancestral sampling of future states. Every chain runs all `T` reverse
//! steps, so the cost per sample does not depend on the time offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::denoiser::{Conditioning, NoiseModel};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};

/// Runs one reverse chain from `x_T ~ N(0, I)` to `x_0`, clamped to `[-1, 1]`.
pub fn sample_chain<M: NoiseModel + ?Sized>(
    model: &M,
    prepared: &[f64],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.state_dim();
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut z = vec![0.0; dim];
    for t_d in (1..=schedule.steps()).rev() {
        let eps = model.predict_eps(&x, t_d, prepared)?;
        if t_d > 1 {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        } else {
            z.fill(0.0);
        }
        x = schedule.reverse_step(&x, t_d, &eps, &z)?;
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler coordinate {i} at t_d = {t_d}")));
        }
    }
    for v in x.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(x)
}

/// `n` independent samples of `s_{t+dt}` given the conditioning.
///
/// One seed per chain is drawn serially from `rng`, so the result does not
/// depend on how chains are scheduled across threads.
pub fn sample_future_states<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    cond: &Conditioning,
    n: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let prepared = model.prepare(cond)?;
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    seeds
        .par_iter()
        .map(|&s| sample_chain(model, &prepared, schedule, s))
        .collect()
}

/// One sample per conditioning, all chains in a single parallel batch.
pub fn sample_batch<M: NoiseModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    conds: &[Conditioning],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let prepared = conds.iter().map(|c| model.prepare(c)).collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..conds.len()).map(|_| rng.random()).collect();
    prepared
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(p, &s)| sample_chain(model, p, schedule, s))
        .collect()
}
