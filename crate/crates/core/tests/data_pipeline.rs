mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use stdiff::data::{
    agtrup_roles, generate_block_masks, read_csv, write_csv, zscore_fit, MaskPlan, Role, TimeSeriesTable,
};

#[test]
fn agtrup_layout_file_splits_into_states_and_covariates() {
    let table = common::agtrup_like(50, 1);
    let mut buf = Vec::new();
    write_csv(&mut buf, &table).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("timestamp,T1_NH4,T1_PO4,IN_METAL_Q,T1_O2,TEMPERATURE,IN_Q\n"));
    let back = read_csv(text.as_bytes(), &agtrup_roles()).unwrap();
    assert_eq!(back.role_dims(), (2, 2, 2));
    assert_eq!(back.covariate_indices().len(), 4);
    assert_eq!(back, table);
}

#[test]
fn ledger_is_complete_and_rates_recount() {
    let table = common::agtrup_like(3000, 2);
    let out = generate_block_masks(&table, &MaskPlan::for_level(40, 8).unwrap()).unwrap();
    let mut seen = HashSet::new();
    for e in &out.ledger.entries {
        let c = table.channel_index(&e.channel).unwrap();
        assert!(seen.insert((e.t, c)), "duplicate ledger entry");
        assert_eq!(e.true_value.to_bits(), table.values()[[e.t, c]].to_bits());
        assert!(!out.masked.is_observed(e.t, c));
    }
    let newly_missing = out.masked.count_missing() - table.count_missing();
    assert_eq!(seen.len(), newly_missing);
    for rate in &out.realized {
        let c = table.channel_index(&rate.channel).unwrap();
        let recount = (0..table.len()).filter(|&t| out.masked.values()[[t, c]].is_nan()).count();
        assert_eq!(rate.rate, recount as f64 / table.len() as f64);
    }
}

#[test]
fn blocks_hit_all_state_channels_together() {
    let table = common::agtrup_like(2000, 3);
    let out = generate_block_masks(&table, &MaskPlan::for_level(30, 1).unwrap()).unwrap();
    for t in 0..table.len() {
        assert_eq!(out.masked.is_observed(t, 0), out.masked.is_observed(t, 1));
    }
    for gap in common::rle_state_gaps(&out.masked) {
        assert!(gap.1 >= 1);
    }
}

#[test]
fn zero_cofailure_leaves_covariates_alone() {
    let table = common::agtrup_like(1000, 4);
    let mut plan = MaskPlan::for_level(50, 2).unwrap();
    plan.cofailure_fraction = 0.0;
    let out = generate_block_masks(&table, &plan).unwrap();
    for c in table.covariate_indices() {
        assert_eq!(out.masked.column(c).to_vec(), table.column(c).to_vec());
    }
}

#[test]
fn training_statistics_come_from_visible_entries_only() {
    let table = common::agtrup_like(3000, 5);
    let out = generate_block_masks(&table, &MaskPlan::for_level(50, 5).unwrap()).unwrap();
    let from_truth = zscore_fit(&table).unwrap();
    let from_masked = zscore_fit(&out.masked).unwrap();
    assert_ne!(from_truth.mean[0], from_masked.mean[0]);
    // Independent mean of the visible NH4 values.
    let visible: Vec<f64> = out.masked.column(0).iter().copied().filter(|v| !v.is_nan()).collect();
    let mean = visible.iter().sum::<f64>() / visible.len() as f64;
    assert!((from_masked.mean[0] - mean).abs() < 1e-12);
    let trained = stdiff::train::train(
        &out.masked,
        &stdiff::train::TrainConfig {
            steps: 0,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(trained.stats, from_masked);
}

fn small_table(values: Vec<f64>) -> TimeSeriesTable {
    let n = values.len() / 2;
    let v = ndarray::Array2::from_shape_vec((n, 2), values).unwrap();
    TimeSeriesTable::from_steps(
        vec![
            stdiff::data::Channel::new("x", Role::State),
            stdiff::data::Channel::new("u", Role::Control),
        ],
        v,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(vals in prop::collection::vec(prop_oneof![Just(f64::NAN), -1e6f64..1e6], 2..80)) {
        let vals = if vals.len() % 2 == 1 { vals[1..].to_vec() } else { vals };
        let t = small_table(vals);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        let roles = vec![("x".to_string(), Role::State), ("u".to_string(), Role::Control)];
        let back = read_csv(buf.as_slice(), &roles).unwrap();
        prop_assert_eq!(back.observed(), t.observed());
        for (a, b) in back.values().iter().zip(t.values()) {
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn masking_never_unmasks(seed in 0u64..500) {
        let base = common::agtrup_like(600, 9);
        let mut v = base.values().clone();
        for t in (0..600).step_by(37) {
            v[[t, 1]] = f64::NAN;
            v[[t, 4]] = f64::NAN;
        }
        let t = base.with_values(v).unwrap();
        let out = generate_block_masks(&t, &MaskPlan::for_level(20, seed).unwrap()).unwrap();
        for (before, after) in t.observed().iter().zip(out.masked.observed()) {
            prop_assert!(*before || !*after);
        }
    }
}
