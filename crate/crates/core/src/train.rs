//! Denoising-regression training loop.
//!
//! Each step samples transitions `(x_{t-1}, u_t, w_t, x_t)`, draws an
//! independent `tau ~ U{1..T}` and `eps ~ N(0, I)` per sample, optionally drops
//! covariates, and takes one Adam step on `|eps - eps_theta(x_{t,tau}, tau, c)|^2`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{zscore_apply, zscore_fit, TimeSeriesTable, ZScoreStats};
use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::model::{batch_loss, init_params, loss_and_gradients, ContextBatch, ModelDims, ModelParams, TrainingBatch};

/// Layer sizes independent of the data's channel counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub time_embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub context_dim: usize,
    pub predictor_width: usize,
    pub predictor_blocks: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let d = ModelDims::new(1, 0, 0);
        Self {
            time_embed_dim: d.time_embed_dim,
            encoder_hidden: d.encoder_hidden,
            context_dim: d.context_dim,
            predictor_width: d.predictor_width,
            predictor_blocks: d.predictor_blocks,
        }
    }
}

impl Architecture {
    pub fn dims(&self, state_dim: usize, control_dim: usize, exogenous_dim: usize) -> ModelDims {
        ModelDims {
            state_dim,
            control_dim,
            exogenous_dim,
            time_embed_dim: self.time_embed_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            context_dim: self.context_dim,
            predictor_width: self.predictor_width,
            predictor_blocks: self.predictor_blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Per-entry covariate dropout probability.
    pub p_drop: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Steps between curve points.
    pub eval_every: usize,
    /// Cap on transitions used for each curve evaluation.
    pub eval_samples: usize,
    /// Decay of the exponential moving average of the weights; 0 disables it.
    /// When enabled the averaged weights are evaluated and returned.
    #[serde(default)]
    pub ema_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            architecture: Architecture::default(),
            batch_size: 64,
            steps: 2000,
            learning_rate: 1e-3,
            p_drop: 0.1,
            seed: 0,
            validation_fraction: 0.1,
            eval_every: 200,
            eval_samples: 2048,
            ema_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!("p_drop must lie in [0, 1), got {}", self.p_drop)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        Ok(())
    }
}

/// One observed transition in z-score space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    /// Index of `x_t` in the source table.
    pub t: usize,
    pub x_prev: Vec<f64>,
    /// `[u_t, w_t]`, zero where missing.
    pub covariates: Vec<f64>,
    pub mask: Vec<bool>,
    pub x_next: Vec<f64>,
}

/// Every `(t-1, t)` pair whose state channels are fully observed at both ends.
pub fn extract_transitions(table: &TimeSeriesTable) -> Result<Vec<TransitionSample>> {
    let states = table.state_indices();
    let covs = table.covariate_indices();
    let mut out = Vec::new();
    for t in 1..table.len() {
        if !(table.state_fully_observed(t - 1) && table.state_fully_observed(t)) {
            continue;
        }
        let v = table.values();
        out.push(TransitionSample {
            t,
            x_prev: states.iter().map(|&c| v[[t - 1, c]]).collect(),
            covariates: covs.iter().map(|&c| table.get(t, c).unwrap_or(0.0)).collect(),
            mask: covs.iter().map(|&c| table.is_observed(t, c)).collect(),
            x_next: states.iter().map(|&c| v[[t, c]]).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Adam with the usual bias correction. Moments are stored flat in canonical tensor order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let n = params.num_params();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let g = grads.to_flat();
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.for_each_tensor_mut(|p| {
            for (i, w) in p.iter_mut().enumerate() {
                let k = offset + i;
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
            offset += p.len();
        });
    }
}

/// Draws per-sample `tau`, `eps` and covariate dropout, and forms `x_{t,tau}`.
///
/// Draw order per sample: `tau`, then `eps` entries, then one dropout draw per covariate
/// (skipped entirely when `p_drop == 0`).
pub fn draw_training_batch(
    samples: &[&TransitionSample],
    sched: &NoiseSchedule,
    p_drop: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingBatch> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Parameter("empty batch".into()));
    }
    let dx = samples[0].x_next.len();
    let dc = samples[0].covariates.len();
    let mut batch = TrainingBatch {
        x_noisy: Array2::zeros((n, dx)),
        taus: Vec::with_capacity(n),
        context: ContextBatch {
            x_prev: Array2::zeros((n, dx)),
            covariates: Array2::zeros((n, dc)),
            mask: Array2::zeros((n, dc)),
        },
        eps: Array2::zeros((n, dx)),
    };
    for (i, s) in samples.iter().enumerate() {
        if s.x_next.len() != dx || s.x_prev.len() != dx || s.covariates.len() != dc {
            return Err(Error::shape("transition sample", dx, s.x_next.len()));
        }
        let tau = rng.gen_range(1..=sched.steps());
        let (signal, noise) = sched.forward_coefficients(tau)?;
        batch.taus.push(tau);
        for j in 0..dx {
            let e: f64 = rng.sample(StandardNormal);
            batch.eps[[i, j]] = e;
            batch.x_noisy[[i, j]] = signal * s.x_next[j] + noise * e;
            batch.context.x_prev[[i, j]] = s.x_prev[j];
        }
        for j in 0..dc {
            let dropped = p_drop > 0.0 && rng.gen::<f64>() < p_drop;
            if s.mask[j] && !dropped {
                batch.context.covariates[[i, j]] = s.covariates[j];
                batch.context.mask[[i, j]] = 1.0;
            }
        }
    }
    Ok(batch)
}

/// One optimizer update on `batch`; returns the batch mean loss before the update.
pub fn train_step(
    batch: &[&TransitionSample],
    params: &mut ModelParams,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
    optimizer: &mut Adam,
    p_drop: f64,
) -> Result<f64> {
    let drawn = draw_training_batch(batch, sched, p_drop, rng)?;
    let (loss, grads) = loss_and_gradients(params, &drawn)?;
    if !loss.is_finite() {
        let mut grad_norm = 0.0;
        grads.for_each_tensor(|g| grad_norm += g.iter().map(|v| v * v).sum::<f64>());
        return Err(Error::TrainingDiverged {
            step: optimizer.steps_taken() as usize + 1,
            loss,
            detail: format!(
                "batch of {}, gradient norm {:.3e}, params finite: {}",
                batch.len(),
                grad_norm.sqrt(),
                params.all_finite()
            ),
        });
    }
    optimizer.update(params, &grads);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    /// Mean minibatch loss since the previous point.
    pub running_loss: f64,
    /// Loss on a fixed draw over training transitions.
    pub train_loss: f64,
    /// Loss on a fixed draw over held-out transitions, when any are held out.
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub stats: ZScoreStats,
    pub curve: Vec<LossPoint>,
    pub schedule: NoiseSchedule,
    pub transitions: usize,
}

/// Writes `step,running_loss,train_loss,validation_loss` rows.
pub fn write_loss_curve<W: std::io::Write>(writer: W, curve: &[LossPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "running_loss", "train_loss", "validation_loss"])?;
    for p in curve {
        w.write_record([
            p.step.to_string(),
            p.running_loss.to_string(),
            p.train_loss.to_string(),
            p.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `size` rows cycling through `pool` in an order fixed by `pick_seed`.
/// Row `i` always gets the same eps (from `noise_seed`) and the same tau from
/// an even grid over `1..=T`, so batches built with one `noise_seed` differ
/// only in their transitions.
fn fixed_eval_batch(
    pool: &[&TransitionSample],
    size: usize,
    sched: &NoiseSchedule,
    pick_seed: u64,
    noise_seed: u64,
) -> Result<Option<TrainingBatch>> {
    if pool.is_empty() || size == 0 {
        return Ok(None);
    }
    let mut order: Vec<&TransitionSample> = pool.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(pick_seed));
    let rows: Vec<&TransitionSample> = order.iter().copied().cycle().take(size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut batch = draw_training_batch(&rows, sched, 0.0, &mut rng)?;
    let mut grid: Vec<usize> = (0..size).map(|i| 1 + i * sched.steps() / size).collect();
    grid.shuffle(&mut rng);
    for (i, (s, &tau)) in rows.iter().zip(&grid).enumerate() {
        let (signal, noise) = sched.forward_coefficients(tau)?;
        batch.taus[i] = tau;
        for j in 0..s.x_next.len() {
            batch.x_noisy[[i, j]] = signal * s.x_next[j] + noise * batch.eps[[i, j]];
        }
    }
    Ok(Some(batch))
}

/// Fits normalization on the visible data, then runs a fixed step budget.
pub fn train(table: &TimeSeriesTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let schedule = cfg.schedule.build()?;
    let stats = zscore_fit(table)?;
    let normalized = zscore_apply(table, &stats)?;
    let transitions = extract_transitions(&normalized)?;
    let (dx, du, dw) = table.role_dims();
    let dims = cfg.architecture.dims(dx, du, dw);
    let mut params = init_params(cfg.seed, &dims)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((transitions.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(transitions.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_pool: Vec<&TransitionSample> = train_idx.iter().map(|&i| &transitions[i]).collect();
    let val_pool: Vec<&TransitionSample> = val_idx.iter().map(|&i| &transitions[i]).collect();

    // Both curves share tau and eps row by row, so their gap reflects the data
    // split rather than Monte Carlo noise.
    let eval_seed = cfg.seed.wrapping_add(0x0e7a_1000);
    let train_eval = fixed_eval_batch(&train_pool, cfg.eval_samples, &schedule, eval_seed, eval_seed + 2)?;
    let val_eval = fixed_eval_batch(&val_pool, cfg.eval_samples, &schedule, eval_seed + 1, eval_seed + 2)?;
    let evaluate = |params: &ModelParams| -> Result<(f64, Option<f64>)> {
        let tr = batch_loss(params, train_eval.as_ref().expect("training pool is nonempty"))?;
        let va = val_eval.as_ref().map(|b| batch_loss(params, b)).transpose()?;
        Ok((tr, va))
    };

    let mut optimizer = Adam::new(&params, cfg.learning_rate);
    let mut ema = (cfg.ema_decay > 0.0).then(|| params.to_flat());
    let mut curve = Vec::new();
    let mut window = (0.0, 0usize);
    let mut batch: Vec<&TransitionSample> = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(train_pool[rng.gen_range(0..train_pool.len())]);
        }
        let loss = train_step(&batch, &mut params, &schedule, &mut rng, &mut optimizer, cfg.p_drop)?;
        window.0 += loss;
        window.1 += 1;
        if let Some(avg) = ema.as_mut() {
            // Warm-up keeps the average from being dominated by the initial weights.
            let d = cfg.ema_decay.min((1 + step) as f64 / (10 + step) as f64);
            let mut k = 0;
            params.for_each_tensor(|t| {
                for &v in t {
                    avg[k] = d * avg[k] + (1.0 - d) * v;
                    k += 1;
                }
            });
        }
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps {
            let (train_loss, validation_loss) = match &ema {
                Some(avg) => {
                    let mut averaged = params.clone();
                    averaged.set_flat(avg)?;
                    evaluate(&averaged)?
                }
                None => evaluate(&params)?,
            };
            log::debug!("step {step}: running {:.4} train {train_loss:.4} val {validation_loss:?}", window.0 / window.1 as f64);
            curve.push(LossPoint {
                step,
                running_loss: window.0 / window.1 as f64,
                train_loss,
                validation_loss,
            });
            window = (0.0, 0);
        }
    }
    if let Some(avg) = &ema {
        params.set_flat(avg)?;
    }
    Ok(TrainOutcome {
        params,
        stats,
        curve,
        schedule,
        transitions: transitions.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Channel, Role};

    fn table(values: Array2<f64>) -> TimeSeriesTable {
        let chans = vec![
            Channel::new("x", Role::State),
            Channel::new("u", Role::Control),
            Channel::new("w", Role::Exogenous),
        ];
        TimeSeriesTable::from_steps(chans, values).unwrap()
    }

    fn ramp(len: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, 3), |(t, c)| ((t * 3 + c) as f64 * 0.37).sin())
    }

    #[test]
    fn full_table_yields_len_minus_one() {
        assert_eq!(extract_transitions(&table(ramp(50))).unwrap().len(), 49);
    }

    #[test]
    fn missing_state_excludes_both_neighbours() {
        let mut v = ramp(20);
        v[[7, 0]] = f64::NAN;
        v[[12, 1]] = f64::NAN;
        let tr = extract_transitions(&table(v)).unwrap();
        assert_eq!(tr.len(), 17);
        assert!(tr.iter().all(|s| s.t != 7 && s.t != 8));
        let s12 = tr.iter().find(|s| s.t == 12).unwrap();
        assert_eq!(s12.mask, vec![false, true]);
        assert_eq!(s12.covariates[0], 0.0);
    }

    #[test]
    fn no_transitions_is_an_error() {
        let mut v = ramp(6);
        for t in (0..6).step_by(2) {
            v[[t, 0]] = f64::NAN;
        }
        assert!(matches!(extract_transitions(&table(v)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.p_drop = 1.0;
        assert!(c.validate().is_err());
        c.p_drop = 0.0;
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dropout_extremes() {
        let tr = extract_transitions(&table(ramp(40))).unwrap();
        let refs: Vec<&TransitionSample> = tr.iter().collect();
        let sched = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = draw_training_batch(&refs, &sched, 0.0, &mut rng).unwrap();
        assert!(none.context.mask.iter().all(|m| *m == 1.0));
        let all = draw_training_batch(&refs, &sched, 1.0, &mut rng).unwrap();
        assert!(all.context.mask.iter().all(|m| *m == 0.0));
        assert!(all.context.covariates.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let tr = extract_transitions(&table(ramp(40))).unwrap();
        let refs: Vec<&TransitionSample> = tr.iter().collect();
        let sched = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let dims = Architecture {
            time_embed_dim: 4,
            encoder_hidden: vec![8],
            context_dim: 4,
            predictor_width: 8,
            predictor_blocks: 1,
        }
        .dims(1, 1, 1);
        let mut params = init_params(1, &dims).unwrap();
        let before = params.clone();
        let mut opt = Adam::new(&params, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        train_step(&refs, &mut params, &sched, &mut rng, &mut opt, 0.2).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let cfg = TrainConfig {
            steps: 0,
            architecture: Architecture {
                time_embed_dim: 4,
                encoder_hidden: vec![8],
                context_dim: 4,
                predictor_width: 8,
                predictor_blocks: 1,
            },
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&table(ramp(60)), &cfg).unwrap();
        let dims = cfg.architecture.dims(1, 1, 1);
        assert_eq!(out.params, init_params(4, &dims).unwrap());
        assert!(out.curve.is_empty());
    }

    fn small(steps: usize, ema_decay: f64) -> TrainConfig {
        TrainConfig {
            steps,
            architecture: Architecture {
                time_embed_dim: 4,
                encoder_hidden: vec![8],
                context_dim: 4,
                predictor_width: 8,
                predictor_blocks: 1,
            },
            batch_size: 16,
            seed: 6,
            eval_every: 0,
            ema_decay,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn negligible_ema_decay_tracks_the_raw_weights() {
        let raw = train(&table(ramp(80)), &small(30, 0.0)).unwrap();
        let avg = train(&table(ramp(80)), &small(30, 1e-12)).unwrap();
        for (a, b) in raw.params.to_flat().iter().zip(avg.params.to_flat()) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn ema_smooths_the_trajectory() {
        let raw = train(&table(ramp(80)), &small(200, 0.0)).unwrap();
        let avg = train(&table(ramp(80)), &small(200, 0.99)).unwrap();
        assert!(avg.params.all_finite());
        assert_ne!(raw.params, avg.params);
        assert!(matches!(train(&table(ramp(80)), &small(1, 1.0)), Err(Error::Config(_))));
    }
}
