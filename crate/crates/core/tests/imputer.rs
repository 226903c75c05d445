mod common;

use stdiff::data::{generate_block_masks, MaskPlan, Role, TimeSeriesTable};
use stdiff::diffusion::{NoiseSchedule, ScheduleConfig};
use stdiff::eval::{masked_mae_rmse, sign_test_p};
use stdiff::impute::{find_gaps, impute_series, CovariateFallback, GapStatus, ImputeConfig, ImputeMode};
use stdiff::model::{init_params, CountingDenoiser, ModelDenoiser, ModelDims};
use stdiff::train::{train, Architecture, TrainConfig};

fn masked_agtrup(level: u32, len: usize, seed: u64) -> stdiff::data::MaskOutcome {
    generate_block_masks(&common::agtrup_like(len, seed), &MaskPlan::for_level(level, seed).unwrap()).unwrap()
}

fn untrained(table: &TimeSeriesTable, steps: usize) -> (ModelDenoiser, NoiseSchedule) {
    let (dx, du, dw) = table.role_dims();
    let mut dims = ModelDims::new(dx, du, dw);
    dims.predictor_width = 16;
    dims.encoder_hidden = vec![16];
    let den = ModelDenoiser::new(init_params(3, &dims).unwrap(), steps).unwrap();
    (den, ScheduleConfig::scaled(steps).build().unwrap())
}

#[test]
fn gaps_match_run_length_scan() {
    let out = masked_agtrup(50, 6000, 11);
    let gaps = find_gaps(&out.masked);
    let rle = common::rle_state_gaps(&out.masked);
    assert!(rle.len() > 10);
    assert_eq!(gaps.len(), rle.len());
    let total: usize = gaps.iter().map(|g| g.horizon).sum();
    assert_eq!(total, rle.iter().map(|r| r.1).sum::<usize>());
    for (g, (start, len)) in gaps.iter().zip(&rle) {
        assert_eq!((g.start, g.horizon), (*start, *len));
        assert_eq!(g.anchor, start.checked_sub(1));
    }
}

#[test]
fn predictor_calls_scale_with_horizon_steps_and_samples() {
    let out = masked_agtrup(30, 800, 4);
    let (den, sched) = untrained(&out.masked, 7);
    let stats = stdiff::data::zscore_fit(&out.masked).unwrap();
    let counting = CountingDenoiser::new(den);
    let cfg = ImputeConfig {
        samples: 3,
        ..ImputeConfig::default()
    };
    let res = impute_series(&out.masked, &counting, &sched, &stats, &cfg).unwrap();
    let expected: u64 = res
        .gaps
        .iter()
        .filter(|g| g.status == GapStatus::Imputed)
        .map(|g| (g.gap.horizon * 7 * 3) as u64)
        .sum();
    assert!(expected > 0);
    assert_eq!(counting.calls(), expected);
}

#[test]
fn trajectories_are_finite_at_defaults() {
    let out = masked_agtrup(40, 600, 8);
    let (den, sched) = untrained(&out.masked, 30);
    let stats = stdiff::data::zscore_fit(&out.masked).unwrap();
    for fallback in [CovariateFallback::MaskZero, CovariateFallback::Kalman] {
        let cfg = ImputeConfig {
            fallback,
            anchor_leading: true,
            ..ImputeConfig::default()
        };
        let res = impute_series(&out.masked, &den, &sched, &stats, &cfg).unwrap();
        for g in &res.gaps {
            let r = g.result.as_ref().unwrap();
            assert!(r.samples.iter().all(|v| v.is_finite()));
            assert!(r.point_estimate.iter().all(|v| v.is_finite()));
        }
        for e in &out.ledger.entries {
            let c = res.table.channel_index(&e.channel).unwrap();
            if res.table.channels()[c].role == Role::State {
                assert!(res.table.values()[[e.t, c]].is_finite());
            }
        }
    }
}

#[test]
fn covariates_improve_over_history_only() {
    let train_table = common::agtrup_like(4000, 500);
    let cfg = TrainConfig {
        schedule: ScheduleConfig::scaled(30),
        architecture: Architecture {
            time_embed_dim: 16,
            encoder_hidden: vec![32],
            context_dim: 16,
            predictor_width: 32,
            predictor_blocks: 2,
        },
        batch_size: 128,
        steps: 2500,
        learning_rate: 1e-3,
        seed: 2,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let model = train(&train_table, &cfg).unwrap();
    let den = ModelDenoiser::new(model.params.clone(), model.schedule.steps()).unwrap();
    let mut wins = 0;
    let n = 20;
    for seed in 0..n {
        let out = masked_agtrup(30, 600, 600 + seed);
        let run = |mode| {
            let c = ImputeConfig {
                samples: 4,
                seed,
                mode,
                anchor_leading: true,
                ..ImputeConfig::default()
            };
            let res = impute_series(&out.masked, &den, &model.schedule, &model.stats, &c).unwrap();
            masked_mae_rmse(&res.table, &out.ledger).unwrap().overall_mae()
        };
        let (full, hist) = (run(ImputeMode::Full), run(ImputeMode::HistoryOnly));
        if full < hist {
            wins += 1;
        }
    }
    let p = sign_test_p(wins, n as usize);
    assert!(p < 0.05, "full mode won {wins}/{n}, p = {p}");
}
