use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance schedule over diffusion steps `1..=T`, stored zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion step count must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("empty beta schedule".into()));
        }
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("beta[{}] = {b} outside (0, 1)", i + 1)));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t_d: usize) -> Result<usize> {
        if t_d == 0 || t_d > self.steps() {
            return Err(Error::Config(format!(
                "diffusion step {t_d} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t_d - 1)
    }

    pub fn beta(&self, t_d: usize) -> Result<f64> {
        Ok(self.beta[self.index(t_d)?])
    }

    pub fn alpha(&self, t_d: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t_d)?])
    }

    pub fn alpha_bar(&self, t_d: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t_d)?])
    }

    /// Reverse-process standard deviation; the variance is fixed to beta.
    pub fn sigma(&self, t_d: usize) -> Result<f64> {
        Ok(self.beta(t_d)?.sqrt())
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps`
    pub fn corrupt(&self, x0: &[f64], t_d: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let ab = self.alpha_bar(t_d)?;
        corrupt_with(x0, ab, eps)
    }

    /// One step of the forward chain `q(x_t | x_{t-1})`.
    pub fn forward_step(&self, x_prev: &[f64], t_d: usize, z: &[f64]) -> Result<Vec<f64>> {
        let b = self.beta(t_d)?;
        check_len("forward noise", x_prev.len(), z.len())?;
        let keep = (1.0 - b).sqrt();
        let noise = b.sqrt();
        Ok(x_prev.iter().zip(z).map(|(x, z)| keep * x + noise * z).collect())
    }

    /// One ancestral step `x_{t-1}` from `x_t`, given the predicted noise.
    pub fn reverse_step(
        &self,
        x: &[f64],
        t_d: usize,
        predicted_eps: &[f64],
        z: &[f64],
    ) -> Result<Vec<f64>> {
        let i = self.index(t_d)?;
        check_len("predicted noise", x.len(), predicted_eps.len())?;
        check_len("reverse noise", x.len(), z.len())?;
        let alpha = self.alpha[i];
        let coef = (1.0 - alpha) / (1.0 - self.alpha_bar[i]).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = self.beta[i].sqrt();
        Ok(x
            .iter()
            .zip(predicted_eps.iter().zip(z))
            .map(|(x, (e, z))| inv_sqrt_alpha * (x - coef * e) + sigma * z)
            .collect())
    }
}

/// Closed-form corruption for an explicit `alpha_bar` in `[0, 1]`.
pub fn corrupt_with(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_len("corruption noise", x0.len(), eps.len())?;
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::Config(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let a = alpha_bar.sqrt();
    let b = (1.0 - alpha_bar).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(what, expected, actual));
    }
    Ok(())
}
