//! Noise schedule and the closed-form DDPM operations.
//!
//! Everything here is a pure function of its inputs. Gaussian draws (`eps`, `z`)
//! are supplied by the caller so that the stochastic operations can be tested
//! deterministically; the seeded generators live in the trainer and imputer.
//!
//! Diffusion steps are 1-based: `tau` ranges over `1..=steps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear beta ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    /// Linear ramp whose endpoints are rescaled by `1000 / steps`, keeping the
    /// total noise budget of the 1000-step default when fewer steps are used.
    pub fn scaled(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_start: (1e-4 * scale).min(0.5),
            beta_end: (0.02 * scale).min(0.999),
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// Precomputed diffusion constants for steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule whose betas ramp linearly from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
                .collect()
        };
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            config: ScheduleConfig {
                steps,
                beta_start,
                beta_end,
            },
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    fn index(&self, tau: usize) -> Result<usize> {
        if tau == 0 || tau > self.steps() {
            return Err(Error::Parameter(format!(
                "diffusion step {tau} outside 1..={}",
                self.steps()
            )));
        }
        Ok(tau - 1)
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at step `tau`.
    pub fn forward_coefficients(&self, tau: usize) -> Result<(f64, f64)> {
        let ab = self.alpha_bar[self.index(tau)?];
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }

    /// Coefficients of one reverse update at step `tau`.
    pub fn reverse_coefficients(&self, tau: usize) -> Result<ReverseCoefficients> {
        let i = self.index(tau)?;
        Ok(ReverseCoefficients {
            inv_sqrt_alpha: 1.0 / self.alpha[i].sqrt(),
            eps_scale: (1.0 - self.alpha[i]) / (1.0 - self.alpha_bar[i]).sqrt(),
            noise_scale: if tau > 1 { self.sigma[i] } else { 0.0 },
        })
    }
}

/// `x_{tau-1} = inv_sqrt_alpha * (x_tau - eps_scale * eps_hat) + noise_scale * z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoefficients {
    pub inv_sqrt_alpha: f64,
    pub eps_scale: f64,
    /// Zero at `tau == 1`.
    pub noise_scale: f64,
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(context, expected, got));
    }
    Ok(())
}

/// Samples `x_tau` from `q(x_tau | x_0)` given the Gaussian draw `eps`.
pub fn forward_noise(x0: &[f64], tau: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    check_len("forward_noise eps", x0.len(), eps.len())?;
    let (signal, noise) = sched.forward_coefficients(tau)?;
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

/// One ancestral reverse update. `z` must be present exactly when `tau > 1`.
pub fn reverse_step(
    x_tau: &[f64],
    eps_hat: &[f64],
    tau: usize,
    sched: &NoiseSchedule,
    z: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_len("reverse_step eps_hat", x_tau.len(), eps_hat.len())?;
    let c = sched.reverse_coefficients(tau)?;
    let mut out: Vec<f64> = x_tau
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| c.inv_sqrt_alpha * (x - c.eps_scale * e))
        .collect();
    match (tau > 1, z) {
        (true, Some(z)) => {
            check_len("reverse_step z", x_tau.len(), z.len())?;
            for (o, zi) in out.iter_mut().zip(z) {
                *o += c.noise_scale * zi;
            }
        }
        (true, None) => {
            return Err(Error::Contract(format!(
                "reverse step at tau = {tau} requires fresh noise"
            )))
        }
        (false, Some(_)) => {
            return Err(Error::Contract(
                "no fresh noise may be injected at tau = 1".into(),
            ))
        }
        (false, None) => {}
    }
    Ok(out)
}

/// Squared Euclidean distance between the true and predicted noise.
pub fn noise_prediction_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    check_len("noise_prediction_loss", eps.len(), eps_hat.len())?;
    Ok(eps
        .iter()
        .zip(eps_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Batch mean of [`noise_prediction_loss`] over paired rows.
pub fn batch_noise_prediction_loss(eps: &[Vec<f64>], eps_hat: &[Vec<f64>]) -> Result<f64> {
    check_len("batch_noise_prediction_loss", eps.len(), eps_hat.len())?;
    if eps.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let mut total = 0.0;
    for (e, h) in eps.iter().zip(eps_hat) {
        total += noise_prediction_loss(e, h)?;
    }
    Ok(total / eps.len() as f64)
}
