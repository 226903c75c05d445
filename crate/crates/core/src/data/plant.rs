//! Synthetic controlled plant used as a verification oracle.
//!
//! `x_t = A f(x_{t-1}) + B u_t + C w_t + sigma * eta_t`, where `f` is the
//! identity for the linear-Gaussian plant and `s * tanh(. / s)` for the
//! nonlinear one. Controls follow a piecewise-constant switching policy and
//! exogenous inputs are seasonal sinusoids plus white noise.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use super::table::{Channel, Role, TimeSeriesTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    LinearGaussian,
    Nonlinear,
}

/// Piecewise-constant levels drawn uniformly from `[-amplitude, amplitude]`,
/// each held for a geometric number of steps with mean `mean_hold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub amplitude: f64,
    pub mean_hold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalInput {
    pub amplitude: f64,
    pub period: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub kind: PlantKind,
    /// `D_x x D_x`, row-major.
    pub a: Vec<Vec<f64>>,
    /// `D_x x D_u`
    pub b: Vec<Vec<f64>>,
    /// `D_x x D_w`
    pub c: Vec<Vec<f64>>,
    pub process_noise: f64,
    pub control: ControlPolicy,
    pub exogenous: SeasonalInput,
    /// Saturation scale `s` of the nonlinear plant.
    pub saturation: f64,
    pub x0: Vec<f64>,
    pub length: usize,
    pub seed: u64,
}

impl PlantConfig {
    /// Scalar linear-Gaussian plant `x_t = a x_{t-1} + b u_t + sigma eta_t` with one control and no exogenous input.
    pub fn scalar(a: f64, b: f64, sigma: f64, length: usize, seed: u64) -> Self {
        Self {
            kind: PlantKind::LinearGaussian,
            a: vec![vec![a]],
            b: vec![vec![b]],
            c: vec![vec![]],
            process_noise: sigma,
            control: ControlPolicy {
                amplitude: 1.0,
                mean_hold: 20.0,
            },
            exogenous: SeasonalInput {
                amplitude: 0.0,
                period: 1.0,
                noise: 0.0,
            },
            saturation: 1.0,
            x0: vec![0.0],
            length,
            seed,
        }
    }

    /// Two saturating states driven by two controls and two seasonal disturbances,
    /// laid out like the treatment-plant data (2 states, 4 covariates).
    /// Controls behave like setpoints and hold for 60 steps on average.
    pub fn nonlinear(length: usize, seed: u64) -> Self {
        Self {
            kind: PlantKind::Nonlinear,
            a: vec![vec![0.75, 0.1], vec![-0.05, 0.8]],
            b: vec![vec![0.8, 0.0], vec![0.3, -0.6]],
            c: vec![vec![0.4, 0.0], vec![0.0, 0.5]],
            process_noise: 0.1,
            control: ControlPolicy {
                amplitude: 1.0,
                mean_hold: 60.0,
            },
            exogenous: SeasonalInput {
                amplitude: 1.0,
                period: 288.0,
                noise: 0.1,
            },
            saturation: 2.0,
            x0: vec![0.0, 0.0],
            length,
            seed,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let dx = self.a.len();
        let du = self.b.first().map_or(0, |r| r.len());
        let dw = self.c.first().map_or(0, |r| r.len());
        (dx, du, dw)
    }

    fn validate(&self) -> Result<()> {
        let (dx, du, dw) = self.dims();
        if dx == 0 {
            return Err(Error::Config("plant needs at least one state".into()));
        }
        let rect = |m: &Vec<Vec<f64>>, cols: usize| m.len() == dx && m.iter().all(|r| r.len() == cols);
        if !rect(&self.a, dx) || !rect(&self.b, du) || !rect(&self.c, dw) || self.x0.len() != dx {
            return Err(Error::Config("plant coefficient shapes are inconsistent".into()));
        }
        if self.process_noise < 0.0 || self.exogenous.noise < 0.0 || self.control.amplitude < 0.0 {
            return Err(Error::Config("noise scales and amplitudes must be non-negative".into()));
        }
        if self.control.mean_hold < 1.0 || self.exogenous.period <= 0.0 || self.saturation <= 0.0 {
            return Err(Error::Config("hold length, period and saturation must be positive".into()));
        }
        let rho = spectral_radius(&self.a);
        if !(rho < 1.0) {
            return Err(Error::Config(format!("state matrix is unstable (spectral radius {rho:.4})")));
        }
        Ok(())
    }

    fn recurrence(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            PlantKind::LinearGaussian => x.to_vec(),
            PlantKind::Nonlinear => x
                .iter()
                .map(|v| self.saturation * (v / self.saturation).tanh())
                .collect(),
        }
    }

    /// Noise-free part of one transition.
    pub fn mean_next(&self, x_prev: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let f = self.recurrence(x_prev);
        (0..self.a.len())
            .map(|i| {
                dot(&self.a[i], &f) + dot(&self.b[i], u) + dot(&self.c[i], w)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spectral radius via Gelfand's formula, `lim |A^k|^(1/k)`, with `k = 2^20`.
pub fn spectral_radius(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| a[i][j]);
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..20 {
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = m.dot(&m);
        power *= 2.0;
    }
    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / power).exp()
}

/// A simulated series with the configuration that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    pub table: TimeSeriesTable,
    pub config: PlantConfig,
}

pub fn simulate_plant(cfg: &PlantConfig) -> Result<SimulatedPlant> {
    cfg.validate()?;
    let (dx, du, dw) = cfg.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let holds = Geometric::new(1.0 / cfg.control.mean_hold).map_err(|e| Error::Config(e.to_string()))?;

    let len = cfg.length;
    let mut u = Array2::<f64>::zeros((len, du));
    for j in 0..du {
        let mut t = 0;
        while t < len {
            let level = if cfg.control.amplitude > 0.0 {
                rng.gen_range(-cfg.control.amplitude..=cfg.control.amplitude)
            } else {
                0.0
            };
            let hold = 1 + holds.sample(&mut rng) as usize;
            for s in t..(t + hold).min(len) {
                u[[s, j]] = level;
            }
            t += hold;
        }
    }
    let mut w = Array2::<f64>::zeros((len, dw));
    for t in 0..len {
        for j in 0..dw {
            let phase = j as f64 * PI / 2.0;
            let season = cfg.exogenous.amplitude * (2.0 * PI * t as f64 / cfg.exogenous.period + phase).sin();
            let n: f64 = rng.sample(StandardNormal);
            w[[t, j]] = season + cfg.exogenous.noise * n;
        }
    }

    let mut x = Array2::<f64>::zeros((len, dx));
    let mut prev = cfg.x0.clone();
    for t in 0..len {
        if t > 0 {
            let ut = u.row(t).to_vec();
            let wt = w.row(t).to_vec();
            let mean = cfg.mean_next(&prev, &ut, &wt);
            prev = mean
                .into_iter()
                .map(|m| {
                    let n: f64 = rng.sample(StandardNormal);
                    m + cfg.process_noise * n
                })
                .collect();
        }
        for i in 0..dx {
            x[[t, i]] = prev[i];
        }
    }

    let mut channels = Vec::new();
    channels.extend((0..dx).map(|i| Channel::new(format!("x{i}"), Role::State)));
    channels.extend((0..du).map(|i| Channel::new(format!("u{i}"), Role::Control)));
    channels.extend((0..dw).map(|i| Channel::new(format!("w{i}"), Role::Exogenous)));
    let values = ndarray::concatenate(ndarray::Axis(1), &[x.view(), u.view(), w.view()]).expect("rows agree");
    Ok(SimulatedPlant {
        table: TimeSeriesTable::from_steps(channels, values)?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quiet_plant_stays_at_zero() {
        let mut cfg = PlantConfig::scalar(0.9, 1.0, 0.0, 200, 1);
        cfg.control.amplitude = 0.0;
        let sim = simulate_plant(&cfg).unwrap();
        assert!(sim.table.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_free_trajectory_follows_recursion() {
        for kind in [PlantKind::LinearGaussian, PlantKind::Nonlinear] {
            let mut cfg = PlantConfig::nonlinear(300, 4);
            cfg.kind = kind;
            cfg.process_noise = 0.0;
            cfg.x0 = vec![0.5, -0.25];
            let sim = simulate_plant(&cfg).unwrap();
            let v = sim.table.values();
            let mut x: [f64; 2] = [0.5, -0.25];
            for t in 1..300 {
                let u = [v[[t, 2]], v[[t, 3]]];
                let w = [v[[t, 4]], v[[t, 5]]];
                let f = match kind {
                    PlantKind::LinearGaussian => x,
                    PlantKind::Nonlinear => [2.0 * (x[0] / 2.0).tanh(), 2.0 * (x[1] / 2.0).tanh()],
                };
                x = [
                    0.75 * f[0] + 0.1 * f[1] + 0.8 * u[0] + 0.4 * w[0],
                    -0.05 * f[0] + 0.8 * f[1] + 0.3 * u[0] - 0.6 * u[1] + 0.5 * w[1],
                ];
                assert!((v[[t, 0]] - x[0]).abs() < 1e-12);
                assert!((v[[t, 1]] - x[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ar1_stationary_variance() {
        let mut cfg = PlantConfig::scalar(0.9, 1.0, 0.1, 200_000, 7);
        cfg.control.amplitude = 0.0;
        let sim = simulate_plant(&cfg).unwrap();
        let xs: Vec<f64> = sim.table.column(0).iter().skip(1000).copied().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let analytic: f64 = 0.01 / (1.0 - 0.81);
        assert!((analytic - 0.0526).abs() < 1e-4);
        assert!((var - analytic).abs() < 0.1 * analytic, "{var} vs {analytic}");
    }

    #[test]
    fn rejects_unstable_dynamics() {
        let cfg = PlantConfig::scalar(1.01, 1.0, 0.1, 10, 0);
        assert!(matches!(simulate_plant(&cfg), Err(Error::Config(_))));
        let mut rot = PlantConfig::nonlinear(10, 0);
        rot.a = vec![vec![0.0, 1.2], vec![-1.2, 0.0]];
        assert!(simulate_plant(&rot).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&[vec![0.9]]) - 0.9).abs() < 1e-9);
        let r = spectral_radius(&[vec![0.5, 1.0], vec![0.0, 0.7]]);
        assert!((r - 0.7).abs() < 1e-4, "{r}");
        assert_eq!(spectral_radius(&[vec![0.0, 1.0], vec![0.0, 0.0]]), 0.0);
    }

    #[test]
    fn output_layout_and_seeding() {
        let cfg = PlantConfig::nonlinear(50, 3);
        let a = simulate_plant(&cfg).unwrap();
        let b = simulate_plant(&cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.table.role_dims(), (2, 2, 2));
        assert_eq!(a.table.channels()[0].name, "x0");
    }
}
