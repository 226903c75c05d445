//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stdiff::data::TimeSeriesTable;
use stdiff::model::{batch_loss, init_params, loss_and_gradients, ContextBatch, ModelDims, ModelParams, TrainingBatch};

pub struct GradientCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst_index: usize,
}

pub fn small_dims() -> ModelDims {
    ModelDims {
        state_dim: 2,
        control_dim: 2,
        exogenous_dim: 1,
        time_embed_dim: 6,
        encoder_hidden: vec![7, 5],
        context_dim: 4,
        predictor_width: 8,
        predictor_blocks: 2,
    }
}

pub fn random_batch(dims: &ModelDims, n: usize, steps: usize, rng: &mut ChaCha8Rng) -> TrainingBatch {
    let dc = dims.control_dim + dims.exogenous_dim;
    let mut normal = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
    let x_noisy = normal(n, dims.state_dim);
    let eps = normal(n, dims.state_dim);
    let x_prev = normal(n, dims.state_dim);
    let mut covariates = normal(n, dc);
    let mask = Array2::from_shape_fn((n, dc), |(i, j)| ((i + 2 * j) % 3 != 0) as u8 as f64);
    covariates.zip_mut_with(&mask, |v, m| *v *= m);
    let taus = (0..n).map(|i| 1 + (i * 37) % steps).collect();
    TrainingBatch {
        x_noisy,
        taus,
        context: ContextBatch { x_prev, covariates, mask },
        eps,
    }
}

/// Central differences with step `h` on every parameter; relative error
/// `|a - n| / max(|a|, |n|)` over entries whose magnitude exceeds `floor`,
/// absolute error `|a - n| / floor` below it.
pub fn finite_difference_check(seed: u64, h: f64, floor: f64) -> GradientCheck {
    let dims = small_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(seed, &dims).unwrap();
    // Push biases and the small output layer off their init values so every group is exercised.
    let mut flat = params.to_flat();
    for v in flat.iter_mut() {
        *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    params.set_flat(&flat).unwrap();
    let batch = random_batch(&dims, 5, 40, &mut rng);
    let (_, grads) = loss_and_gradients(&params, &batch).unwrap();
    let analytic = grads.to_flat();
    let mut probe: ModelParams = params.clone();
    let mut out = GradientCheck {
        max_rel_err: 0.0,
        checked: 0,
        worst_index: 0,
    };
    for i in 0..flat.len() {
        let mut f = flat.clone();
        f[i] = flat[i] + h;
        probe.set_flat(&f).unwrap();
        let up = batch_loss(&probe, &batch).unwrap();
        f[i] = flat[i] - h;
        probe.set_flat(&f).unwrap();
        let down = batch_loss(&probe, &batch).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        let err = (analytic[i] - numeric).abs() / scale;
        if err > out.max_rel_err {
            out.max_rel_err = err;
            out.worst_index = i;
        }
        out.checked += 1;
    }
    out
}

/// `(start, len)` of maximal runs of rows with any missing state channel.
pub fn rle_state_gaps(table: &TimeSeriesTable) -> Vec<(usize, usize)> {
    let states: Vec<usize> = (0..table.channels().len())
        .filter(|&c| table.channels()[c].role == stdiff::data::Role::State)
        .collect();
    let flags: Vec<bool> = (0..table.len())
        .map(|t| states.iter().any(|&c| table.values()[[t, c]].is_nan()))
        .collect();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < flags.len() {
        let j = flags[i..].iter().position(|&f| f != flags[i]).map_or(flags.len(), |p| i + p);
        if flags[i] {
            runs.push((i, j - i));
        }
        i = j;
    }
    runs
}

/// Count of `t` with state fully observed at both `t-1` and `t`, by a direct scan.
pub fn recount_transitions(table: &TimeSeriesTable) -> usize {
    let v = table.values();
    let states: Vec<usize> = (0..table.channels().len())
        .filter(|&c| table.channels()[c].role == stdiff::data::Role::State)
        .collect();
    let full: Vec<bool> = (0..table.len())
        .map(|t| states.iter().all(|&c| !v[[t, c]].is_nan()))
        .collect();
    full.windows(2).filter(|w| w[0] && w[1]).count()
}

/// Nonlinear plant output under the Agtrup channel names and roles.
pub fn agtrup_like(len: usize, seed: u64) -> TimeSeriesTable {
    use stdiff::data::{simulate_plant, Channel, PlantConfig, Role};
    let sim = simulate_plant(&PlantConfig::nonlinear(len, seed)).unwrap();
    let names = [
        ("T1_NH4", Role::State),
        ("T1_PO4", Role::State),
        ("IN_METAL_Q", Role::Control),
        ("T1_O2", Role::Control),
        ("TEMPERATURE", Role::Exogenous),
        ("IN_Q", Role::Exogenous),
    ];
    let channels = names.iter().map(|(n, r)| Channel::new(*n, *r)).collect();
    TimeSeriesTable::from_steps(channels, sim.table.values().clone()).unwrap()
}
