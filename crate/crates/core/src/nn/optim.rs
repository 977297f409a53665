//! Gradient clipping and Adam.
//!
//! Both operate on anything exposing its parameters as a fixed, ordered list of
//! flat slices, so composite models (an MLP plus an auxiliary encoder) clip and
//! update jointly.

use crate::error::{Error, Result};

/// A fixed, ordered collection of flat parameter (or gradient) tensors.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// `self += other`, tensor by tensor.
    fn accumulate(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Scales every gradient by `max_norm / norm` when the joint L2 norm exceeds
/// `max_norm`. Returns the norm measured before clipping.
///
/// Norms within a few ulps of the limit are left alone, so clipping an
/// already clipped set is an exact no-op.
pub fn clip_global_norm<G: ParamTensors + ?Sized>(grads: &mut G, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm * (1.0 + 4.0 * f64::EPSILON) {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one flat buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParamTensors + ?Sized>(params: &P) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config<P: ParamTensors + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes = params.shapes();
        Self {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the update
    /// and leaves both parameters and moments untouched.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, lr: f64) -> Result<()>
    where
        P: ParamTensors + ?Sized,
        G: ParamTensors + ?Sized,
    {
        let grad_tensors = grads.tensors();
        let param_tensors = params.tensors_mut();
        if grad_tensors.len() != self.first.len() || param_tensors.len() != self.first.len() {
            return Err(Error::shape(
                "adam tensor count",
                self.first.len(),
                grad_tensors.len(),
            ));
        }
        for (i, (g, p)) in grad_tensors.iter().zip(&param_tensors).enumerate() {
            if g.len() != self.first[i].len() || p.len() != self.first[i].len() {
                return Err(Error::shape(
                    format!("adam tensor {i}"),
                    self.first[i].len(),
                    g.len(),
                ));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {i} entry {j}; update aborted"
                )));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (g, p)) in grad_tensors.into_iter().zip(param_tensors).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Plain vector of tensors; handy for tests and small auxiliary parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorList(pub Vec<Vec<f64>>);

impl ParamTensors for TensorList {
    fn tensors(&self) -> Vec<&[f64]> {
        self.0.iter().map(|t| t.as_slice()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.iter_mut().map(|t| t.as_mut_slice()).collect()
    }
}
