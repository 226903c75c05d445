//! Scalar linear-Gaussian state-space model with filter, RTS smoother and
//! maximum-likelihood fitting of the local-level special case.

use crate::error::{Error, Result};

/// `m_t = phi m_{t-1} + d_t + eta_t`, `eta ~ N(0, q)`; `y_t = m_t + eps_t`, `eps ~ N(0, r)`;
/// `m_0 ~ N(init_mean, init_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStateSpace {
    pub phi: f64,
    pub q: f64,
    pub r: f64,
    pub init_mean: f64,
    pub init_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub predicted_mean: Vec<f64>,
    pub predicted_var: Vec<f64>,
    pub filtered_mean: Vec<f64>,
    pub filtered_var: Vec<f64>,
    /// Sum of `ln F_t` over observed steps after the first.
    pub sum_log_f: f64,
    /// Sum of `v_t^2 / F_t` over observed steps after the first.
    pub sum_scaled_sq: f64,
    /// Observed steps contributing to the two sums.
    pub informative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ScalarStateSpace {
    /// Random walk plus noise.
    pub fn local_level(q: f64, r: f64, init_mean: f64, init_var: f64) -> Self {
        Self {
            phi: 1.0,
            q,
            r,
            init_mean,
            init_var,
        }
    }

    pub fn filter(&self, y: &[Option<f64>], drive: Option<&[f64]>) -> FilterOutput {
        let n = y.len();
        let mut out = FilterOutput {
            predicted_mean: Vec::with_capacity(n),
            predicted_var: Vec::with_capacity(n),
            filtered_mean: Vec::with_capacity(n),
            filtered_var: Vec::with_capacity(n),
            sum_log_f: 0.0,
            sum_scaled_sq: 0.0,
            informative: 0,
        };
        let mut seen_first = false;
        for t in 0..n {
            let (a, p) = if t == 0 {
                (self.init_mean, self.init_var)
            } else {
                let d = drive.map_or(0.0, |d| d[t]);
                (
                    self.phi * out.filtered_mean[t - 1] + d,
                    self.phi * self.phi * out.filtered_var[t - 1] + self.q,
                )
            };
            out.predicted_mean.push(a);
            out.predicted_var.push(p);
            match y[t] {
                Some(obs) => {
                    let f = p + self.r;
                    let v = obs - a;
                    let k = p / f;
                    out.filtered_mean.push(a + k * v);
                    out.filtered_var.push((1.0 - k) * p);
                    if seen_first {
                        out.sum_log_f += f.ln();
                        out.sum_scaled_sq += v * v / f;
                        out.informative += 1;
                    }
                    seen_first = true;
                }
                None => {
                    out.filtered_mean.push(a);
                    out.filtered_var.push(p);
                }
            }
        }
        out
    }

    /// Rauch-Tung-Striebel fixed-interval smoother.
    pub fn smooth(&self, y: &[Option<f64>], drive: Option<&[f64]>) -> SmootherOutput {
        let f = self.filter(y, drive);
        let n = y.len();
        let mut mean = f.filtered_mean.clone();
        let mut var = f.filtered_var.clone();
        for t in (0..n.saturating_sub(1)).rev() {
            let j = f.filtered_var[t] * self.phi / f.predicted_var[t + 1];
            mean[t] = f.filtered_mean[t] + j * (mean[t + 1] - f.predicted_mean[t + 1]);
            var[t] = f.filtered_var[t] + j * j * (var[t + 1] - f.predicted_var[t + 1]);
        }
        SmootherOutput { mean, var }
    }
}

fn observed_moments(y: &[Option<f64>]) -> Result<(f64, f64, f64, usize)> {
    let obs: Vec<f64> = y.iter().flatten().copied().collect();
    let first = *obs
        .first()
        .ok_or_else(|| Error::Baseline("channel has no observed values".into()))?;
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((first, mean, var, obs.len()))
}

/// Concentrated `-2 log L` of the local-level model with signal-to-noise ratio `psi = q / r`.
fn concentrated_deviance(y: &[Option<f64>], log_psi: f64, first: f64, diffuse: f64) -> (f64, f64) {
    let model = ScalarStateSpace::local_level(log_psi.exp(), 1.0, first, diffuse);
    let f = model.filter(y, None);
    if f.informative == 0 {
        return (0.0, 1.0);
    }
    let m = f.informative as f64;
    let scale = (f.sum_scaled_sq / m).max(1e-300);
    (f.sum_log_f + m * scale.ln(), scale)
}

/// Maximum-likelihood local-level model for one channel (diffuse initial state).
pub fn fit_local_level(y: &[Option<f64>]) -> Result<ScalarStateSpace> {
    let (first, _mean, var, count) = observed_moments(y)?;
    let diffuse = 1e7 * (var + 1.0);
    if count < 3 {
        return Ok(ScalarStateSpace::local_level(var.max(1e-12), 1e-12, first, diffuse));
    }
    let (lo, hi) = (-15.0f64, 6.0f64);
    let grid = 43;
    let mut best = (f64::INFINITY, lo);
    for i in 0..grid {
        let lp = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        let (dev, _) = concentrated_deviance(y, lp, first, diffuse);
        if dev < best.0 {
            best = (dev, lp);
        }
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = concentrated_deviance(y, c, first, diffuse).0;
    let mut fd = concentrated_deviance(y, d, first, diffuse).0;
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = concentrated_deviance(y, c, first, diffuse).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = concentrated_deviance(y, d, first, diffuse).0;
        }
    }
    let log_psi = 0.5 * (a + b);
    let (_, scale) = concentrated_deviance(y, log_psi, first, diffuse);
    let r = scale.max(1e-12 * (var + 1e-300));
    Ok(ScalarStateSpace::local_level(log_psi.exp() * r, r, first, diffuse))
}
