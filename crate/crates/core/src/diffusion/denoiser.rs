//! Noise-prediction network `eps(x, s_t, [s_{t+1}], t_d, dt, phi)` and the
//! simplified DDPM training loss.
//!
//! Conditioning is by concatenation. Input layout:
//! `[x, s_t, s_{t+1} (optional), sin(t_d), sin(dt), phi]`.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::embedding::sinusoidal;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{io_err, read_dim, read_f64s, read_mlp, write_f64s, write_mlp, write_u32};
use crate::nn::{accumulate_batch, Matrix, Mlp, MlpGrads, ParamTensors};
use crate::occupancy::policy_embedding::{
    scalar_policy_embedding, EmbeddingMode, EncoderGrads, PolicyContext, SequenceEncoder, DEFAULT_WINDOW_MAX,
};
use crate::occupancy::tuples::OccupancyTuple;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub state_dim: usize,
    /// Width of each sinusoidal time code (`t_d` and `dt`); must be even.
    pub time_embed_dim: usize,
    /// Width of the policy embedding; must be even in scalar mode.
    pub policy_dim: usize,
    pub policy_mode: EmbeddingMode,
    pub window_max: usize,
    /// Also feed `s_{t+1}` to the network.
    pub condition_on_next: bool,
    pub hidden: Vec<usize>,
}

impl DenoiserConfig {
    pub fn new(state_dim: usize, policy_mode: EmbeddingMode) -> Self {
        Self {
            state_dim,
            time_embed_dim: 16,
            policy_dim: 16,
            policy_mode,
            window_max: DEFAULT_WINDOW_MAX,
            condition_on_next: false,
            hidden: vec![256, 256],
        }
    }

    pub fn input_dim(&self) -> usize {
        let states = if self.condition_on_next { 3 } else { 2 };
        states * self.state_dim + 2 * self.time_embed_dim + self.policy_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::Config("state_dim must be positive".into()));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!("time_embed_dim {} must be even and positive", self.time_embed_dim)));
        }
        if self.policy_dim == 0 || self.policy_dim % 2 != 0 {
            return Err(Error::Config(format!("policy_dim {} must be even and positive", self.policy_dim)));
        }
        if self.window_max == 0 {
            return Err(Error::Config("window_max must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the denoiser conditions on besides `x` and `t_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub state: Vec<f64>,
    pub next_state: Option<Vec<f64>>,
    pub delta_t: usize,
    pub policy: PolicyContext,
}

impl Conditioning {
    pub fn new(state: Vec<f64>, delta_t: usize, policy: PolicyContext) -> Self {
        Self {
            state,
            next_state: None,
            delta_t,
            policy,
        }
    }

    pub fn from_tuple(t: &OccupancyTuple) -> Self {
        Self {
            state: t.state.clone(),
            next_state: Some(t.next_state.clone()),
            delta_t: t.delta_t,
            policy: t.policy.clone(),
        }
    }
}

/// Anything that predicts the injected noise; the sampler and loss are
/// generic over it so tests can plug in analytic stubs.
pub trait NoiseModel: Sync {
    fn state_dim(&self) -> usize;

    /// Conditioning features that do not depend on `x` or `t_d`.
    fn prepare(&self, cond: &Conditioning) -> Result<Vec<f64>>;

    fn predict_eps(&self, x: &[f64], t_d: usize, prepared: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    pub net: Mlp,
    /// Present in sequential mode only.
    pub encoder: Option<SequenceEncoder>,
    evaluations: AtomicU64,
}

impl Clone for Denoiser {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            net: self.net.clone(),
            encoder: self.encoder.clone(),
            evaluations: AtomicU64::new(self.evaluations()),
        }
    }
}

impl PartialEq for Denoiser {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.net == other.net && self.encoder == other.encoder
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads {
    pub net: MlpGrads,
    pub encoder: Option<EncoderGrads>,
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = Mlp::new(config.input_dim(), &config.hidden, config.state_dim, rng)?;
        let encoder = match config.policy_mode {
            EmbeddingMode::Scalar => None,
            EmbeddingMode::Sequential => Some(SequenceEncoder::new(config.state_dim, config.policy_dim, rng)),
        };
        Ok(Self {
            config,
            net,
            encoder,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn from_parts(config: DenoiserConfig, net: Mlp, encoder: Option<SequenceEncoder>) -> Result<Self> {
        config.validate()?;
        if net.input_dim() != config.input_dim() || net.output_dim() != config.state_dim {
            return Err(Error::shape("denoiser network input", config.input_dim(), net.input_dim()));
        }
        match (&encoder, config.policy_mode) {
            (None, EmbeddingMode::Scalar) => {}
            (Some(e), EmbeddingMode::Sequential) if e.dim() == config.policy_dim && e.state_dim() == config.state_dim => {}
            _ => return Err(Error::Config("policy encoder does not match the embedding mode".into())),
        }
        Ok(Self {
            config,
            net,
            encoder,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Total network evaluations since construction (or the last reset).
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }

    pub fn zero_grads(&self) -> DenoiserGrads {
        DenoiserGrads {
            net: self.net.zero_grads(),
            encoder: self.encoder.as_ref().map(SequenceEncoder::zero_grads),
        }
    }

    pub fn policy_embedding(&self, policy: &PolicyContext) -> Result<Vec<f64>> {
        match (policy, &self.encoder) {
            (PolicyContext::Scalar(i), None) => Ok(scalar_policy_embedding(*i, self.config.policy_dim).value),
            (PolicyContext::Window(w), Some(enc)) => Ok(enc.embed(w)?.value),
            (PolicyContext::Scalar(_), Some(_)) => {
                Err(Error::Config("scalar policy context given to a sequential denoiser".into()))
            }
            (PolicyContext::Window(_), None) => {
                Err(Error::Config("window policy context given to a scalar denoiser".into()))
            }
        }
    }

    /// The full network input for one evaluation.
    pub fn encode_conditioning(&self, x: &[f64], cond: &Conditioning, t_d: usize) -> Result<Vec<f64>> {
        let prepared = self.prepare(cond)?;
        self.assemble(x, t_d, &prepared)
    }

    /// Lays out `[x, s_t, s_next?, sin(t_d), sin(dt), phi]` given the
    /// prepared `[s_t, s_next?, sin(dt), phi]`.
    fn assemble(&self, x: &[f64], t_d: usize, prepared: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.state_dim;
        if x.len() != d {
            return Err(Error::shape("denoiser x", d, x.len()));
        }
        let states = if self.config.condition_on_next { 2 * d } else { d };
        let mut input = Vec::with_capacity(self.config.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(&prepared[..states]);
        input.extend(sinusoidal(t_d as f64, self.config.time_embed_dim));
        input.extend_from_slice(&prepared[states..]);
        debug_assert_eq!(input.len(), self.config.input_dim());
        Ok(input)
    }

    fn policy_offset(&self) -> usize {
        let states = if self.config.condition_on_next { 3 } else { 2 };
        states * self.config.state_dim + 2 * self.config.time_embed_dim
    }

    /// Per-sample loss `||eps - eps_theta||^2` with its gradient accumulated
    /// (scaled by `weight`) into `grads`.
    fn sample_loss(
        &self,
        tuple: &OccupancyTuple,
        t_d: usize,
        eps: &[f64],
        schedule: &NoiseSchedule,
        weight: f64,
        grads: &mut DenoiserGrads,
    ) -> Result<f64> {
        let cond = Conditioning::from_tuple(tuple);
        let noisy = schedule.corrupt(&tuple.future_state, t_d, eps)?;
        let input = self.encode_conditioning(&noisy, &cond, t_d)?;
        let (pred, cache) = self.net.forward(&input).map_err(|e| numeric_context(e, t_d, schedule))?;
        let loss: f64 = pred.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum();
        if !loss.is_finite() {
            return Err(numeric_context(Error::NonFinite("diffusion loss".into()), t_d, schedule));
        }
        let grad_out: Vec<f64> = pred.iter().zip(eps).map(|(p, e)| 2.0 * weight * (p - e)).collect();
        let input_grad = self.net.backward_into(&cache, &grad_out, &mut grads.net)?;
        if let (PolicyContext::Window(w), Some(enc), Some(eg)) = (&cond.policy, &self.encoder, grads.encoder.as_mut()) {
            enc.backward_into(w, &input_grad[self.policy_offset()..], eg);
        }
        Ok(loss * weight)
    }
}

fn numeric_context(e: Error, t_d: usize, schedule: &NoiseSchedule) -> Error {
    match e {
        Error::NonFinite(what) => {
            let ab = schedule.alpha_bar(t_d).unwrap_or(f64::NAN);
            Error::NonFinite(format!("{what} at t_d = {t_d} (alpha_bar = {ab:.6e})"))
        }
        other => other,
    }
}

impl NoiseModel for Denoiser {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn prepare(&self, cond: &Conditioning) -> Result<Vec<f64>> {
        let d = self.config.state_dim;
        if cond.state.len() != d {
            return Err(Error::shape("conditioning state", d, cond.state.len()));
        }
        if cond.delta_t == 0 {
            return Err(Error::Config("time offset must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(self.config.input_dim() - d - self.config.time_embed_dim);
        out.extend_from_slice(&cond.state);
        if self.config.condition_on_next {
            let next = cond
                .next_state
                .as_ref()
                .ok_or_else(|| Error::Config("denoiser expects a next state".into()))?;
            if next.len() != d {
                return Err(Error::shape("conditioning next state", d, next.len()));
            }
            out.extend_from_slice(next);
        }
        out.extend(sinusoidal(cond.delta_t as f64, self.config.time_embed_dim));
        out.extend(self.policy_embedding(&cond.policy)?);
        Ok(out)
    }

    fn predict_eps(&self, x: &[f64], t_d: usize, prepared: &[f64]) -> Result<Vec<f64>> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let input = self.assemble(x, t_d, prepared)?;
        self.net.predict(&input)
    }
}

impl ParamTensors for Denoiser {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.net.tensors();
        if let Some(e) = &self.encoder {
            t.extend(e.tensors());
        }
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.net.tensors_mut();
        if let Some(e) = &mut self.encoder {
            t.extend(e.tensors_mut());
        }
        t
    }
}

impl ParamTensors for DenoiserGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.net.tensors();
        if let Some(e) = &self.encoder {
            t.extend(e.tensors());
        }
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.net.tensors_mut();
        if let Some(e) = &mut self.encoder {
            t.extend(e.tensors_mut());
        }
        t
    }
}

/// Noise draws for one loss evaluation, fixed up-front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    pub t_d: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
}

impl NoiseDraws {
    pub fn sample<R: Rng + ?Sized>(count: usize, dim: usize, schedule: &NoiseSchedule, rng: &mut R) -> Self {
        let mut t_d = Vec::with_capacity(count);
        let mut eps = Vec::with_capacity(count);
        for _ in 0..count {
            t_d.push(rng.random_range(1..=schedule.steps()));
            eps.push((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        }
        Self { t_d, eps }
    }
}

/// Batch-mean of `||eps - eps_theta(corrupt(s_{t+dt}, t_d, eps), cond)||^2`
/// and its exact gradient, with `t_d ~ U{1..T}` and `eps ~ N(0, I)` per tuple.
pub fn diffusion_loss<R: Rng + ?Sized>(
    denoiser: &Denoiser,
    batch: &[OccupancyTuple],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, DenoiserGrads)> {
    let draws = NoiseDraws::sample(batch.len(), denoiser.config.state_dim, schedule, rng);
    diffusion_loss_with(denoiser, batch, schedule, &draws)
}

pub fn diffusion_loss_with(
    denoiser: &Denoiser,
    batch: &[OccupancyTuple],
    schedule: &NoiseSchedule,
    draws: &NoiseDraws,
) -> Result<(f64, DenoiserGrads)> {
    if batch.is_empty() {
        return Err(Error::Config("diffusion batch is empty".into()));
    }
    assert_eq!(draws.t_d.len(), batch.len(), "one noise draw per tuple");
    let weight = 1.0 / batch.len() as f64;
    accumulate_batch(batch.len(), || denoiser.zero_grads(), |i, g| {
        denoiser.sample_loss(&batch[i], draws.t_d[i], &draws.eps[i], schedule, weight, g)
    })
}

/// Loss value for any [`NoiseModel`], without gradients.
pub fn diffusion_loss_value<M: NoiseModel + ?Sized>(
    model: &M,
    batch: &[OccupancyTuple],
    schedule: &NoiseSchedule,
    draws: &NoiseDraws,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("diffusion batch is empty".into()));
    }
    let mut total = 0.0;
    for (i, tuple) in batch.iter().enumerate() {
        let t_d = draws.t_d[i];
        let noisy = schedule.corrupt(&tuple.future_state, t_d, &draws.eps[i])?;
        let prepared = model.prepare(&Conditioning::from_tuple(tuple))?;
        let pred = model.predict_eps(&noisy, t_d, &prepared)?;
        total += pred.iter().zip(&draws.eps[i]).map(|(p, e)| (p - e) * (p - e)).sum::<f64>();
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("diffusion loss".into()));
    }
    Ok(loss)
}

pub const DENOISER_MAGIC: [u8; 4] = *b"DVFD";

pub fn write_denoiser<W: Write>(w: &mut W, d: &Denoiser) -> Result<()> {
    let c = &d.config;
    w.write_all(&DENOISER_MAGIC).map_err(io_err)?;
    write_u32(w, c.state_dim as u32)?;
    write_u32(w, c.time_embed_dim as u32)?;
    write_u32(w, c.policy_dim as u32)?;
    w.write_u8(matches!(c.policy_mode, EmbeddingMode::Sequential) as u8).map_err(io_err)?;
    write_u32(w, c.window_max as u32)?;
    w.write_u8(c.condition_on_next as u8).map_err(io_err)?;
    write_u32(w, c.hidden.len() as u32)?;
    for &h in &c.hidden {
        write_u32(w, h as u32)?;
    }
    write_mlp(w, &d.net)?;
    if let Some(e) = &d.encoder {
        write_f64s(w, e.weight.values())?;
        write_f64s(w, &e.bias)?;
    }
    Ok(())
}

pub fn read_denoiser<R: Read>(r: &mut R) -> Result<Denoiser> {
    crate::nn::checkpoint::expect_magic(r, &DENOISER_MAGIC)?;
    let state_dim = read_dim(r, "state dim")?;
    let time_embed_dim = read_dim(r, "time embed dim")?;
    let policy_dim = read_dim(r, "policy dim")?;
    let policy_mode = if r.read_u8().map_err(io_err)? != 0 {
        EmbeddingMode::Sequential
    } else {
        EmbeddingMode::Scalar
    };
    let window_max = read_dim(r, "window max")?;
    let condition_on_next = r.read_u8().map_err(io_err)? != 0;
    let n_hidden = read_dim(r, "hidden count")?;
    let hidden = (0..n_hidden).map(|_| read_dim(r, "hidden width")).collect::<Result<Vec<_>>>()?;
    let config = DenoiserConfig {
        state_dim,
        time_embed_dim,
        policy_dim,
        policy_mode,
        window_max,
        condition_on_next,
        hidden,
    };
    let net = read_mlp(r)?;
    let encoder = match policy_mode {
        EmbeddingMode::Scalar => None,
        EmbeddingMode::Sequential => Some(SequenceEncoder {
            weight: Matrix::from_vec(policy_dim, state_dim, read_f64s(r, policy_dim * state_dim)?)?,
            bias: read_f64s(r, policy_dim)?,
        }),
    };
    Denoiser::from_parts(config, net, encoder)
}
