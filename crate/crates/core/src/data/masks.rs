//! Contiguous block-missingness generator and the ground-truth ledger.
//!
//! Blocks are placed over time on all state channels at once until the mean
//! state-channel missing rate reaches the scenario's realized target; the last
//! block is truncated so the target is met without overshoot. Overlapping
//! blocks merge into one outage, and inside every outage each covariate
//! independently loses a contiguous sub-run covering `cofailure_fraction` of it.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::table::{Role, TimeSeriesTable};
use crate::error::{Error, Result};

/// Scenario levels and the realized state-channel rate each one targets.
pub const SCENARIO_LEVELS: [u32; 4] = [20, 30, 40, 50];

/// Realized mean state-channel missing rate for a nominal scenario level.
pub fn realized_state_target(level: u32) -> Result<f64> {
    match level {
        20 => Ok(0.11575),
        30 => Ok(0.17225),
        40 => Ok(0.22675),
        50 => Ok(0.2828),
        other => Err(Error::Parameter(format!(
            "missingness level must be one of 20, 30, 40, 50; got {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Nominal scenario level in percent.
    pub level: u32,
    /// Realized mean state-channel missing fraction to reach.
    pub state_target: f64,
    /// Allowed absolute deviation from `state_target`.
    pub tolerance: f64,
    /// Mean of the geometric block-length law, in steps.
    pub mean_block_len: f64,
    /// Fraction of each block dropped on every covariate channel.
    pub cofailure_fraction: f64,
    pub seed: u64,
}

impl MaskPlan {
    pub fn for_level(level: u32, seed: u64) -> Result<Self> {
        Ok(Self {
            level,
            state_target: realized_state_target(level)?,
            tolerance: 0.01,
            mean_block_len: 48.0,
            cofailure_fraction: 0.5,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        realized_state_target(self.level)?;
        if !(self.state_target > 0.0 && self.state_target < 1.0) {
            return Err(Error::Parameter(format!("state target {} outside (0, 1)", self.state_target)));
        }
        if !(self.mean_block_len >= 1.0) {
            return Err(Error::Parameter("mean block length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cofailure_fraction) {
            return Err(Error::Parameter("co-failure fraction must lie in [0, 1]".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Parameter("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// One hidden ground-truth value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: usize,
    pub channel: String,
    pub true_value: f64,
}

/// Every entry hidden by a mask plan, ordered by time then column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "channel", "true_value"])?;
        for e in &self.entries {
            w.write_record([e.t.to_string(), e.channel.clone(), e.true_value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<LedgerEntry>, _>>()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRate {
    pub channel: String,
    pub role: Role,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub masked: TimeSeriesTable,
    pub ledger: Ledger,
    /// Effective per-channel missing fraction of the masked table.
    pub realized: Vec<ChannelRate>,
    /// Placed `(start, len)` blocks, in placement order.
    pub blocks: Vec<(usize, usize)>,
}

impl MaskOutcome {
    fn mean_rate(&self, pick: impl Fn(Role) -> bool) -> f64 {
        let rates: Vec<f64> = self.realized.iter().filter(|r| pick(r.role)).map(|r| r.rate).collect();
        rates.iter().sum::<f64>() / rates.len().max(1) as f64
    }

    pub fn state_rate(&self) -> f64 {
        self.mean_rate(|r| r == Role::State)
    }

    pub fn covariate_rate(&self) -> f64 {
        self.mean_rate(|r| r != Role::State)
    }
}

const MAX_BLOCKS: usize = 1_000_000;

pub fn generate_block_masks(table: &TimeSeriesTable, plan: &MaskPlan) -> Result<MaskOutcome> {
    plan.validate()?;
    let len = table.len();
    let states = table.state_indices();
    if states.is_empty() || len == 0 {
        return Err(Error::Generation("table has no state channels to mask".into()));
    }
    let covariates = table.covariate_indices();
    let mut observed = table.observed().clone();
    let total = (len * states.len()) as f64;
    let mut state_missing = states
        .iter()
        .map(|&c| observed.column(c).iter().filter(|o| !**o).count())
        .sum::<usize>();
    if state_missing as f64 / total > plan.state_target + plan.tolerance {
        return Err(Error::Generation(format!(
            "state channels already {:.2}% missing, above the {:.2}% target",
            100.0 * state_missing as f64 / total,
            100.0 * plan.state_target
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let lengths = Geometric::new(1.0 / plan.mean_block_len).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut hidden = Array2::from_elem(observed.dim(), false);
    let mut blocks = Vec::new();
    let goal = (plan.state_target * total).round() as usize;

    while state_missing < goal {
        if blocks.len() >= MAX_BLOCKS {
            return Err(Error::Generation("could not reach the target missing rate".into()));
        }
        let start = rng.gen_range(0..len);
        let want = 1 + lengths.sample(&mut rng) as usize;
        let end = (start + want).min(len);
        let mut placed = 0;
        for t in start..end {
            if state_missing >= goal {
                break;
            }
            for &c in &states {
                if observed[[t, c]] {
                    observed[[t, c]] = false;
                    hidden[[t, c]] = true;
                    state_missing += 1;
                }
            }
            placed += 1;
        }
        blocks.push((start, placed));
    }

    // Overlapping blocks merge into one outage; covariates co-fail once per outage.
    let outage: Vec<bool> = (0..len).map(|t| states.iter().any(|&c| hidden[[t, c]])).collect();
    let mut t = 0;
    while t < len {
        if !outage[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < len && outage[t] {
            t += 1;
        }
        let run = t - start;
        let cofail = (plan.cofailure_fraction * run as f64).round() as usize;
        if cofail == 0 {
            continue;
        }
        for &c in &covariates {
            let offset = rng.gen_range(0..=run - cofail);
            for s in start + offset..start + offset + cofail {
                if observed[[s, c]] {
                    observed[[s, c]] = false;
                    hidden[[s, c]] = true;
                }
            }
        }
    }

    let realized_state = state_missing as f64 / total;
    if (realized_state - plan.state_target).abs() > plan.tolerance {
        return Err(Error::Generation(format!(
            "realized state rate {:.4} misses target {:.4}",
            realized_state, plan.state_target
        )));
    }

    let mut values = table.values().clone();
    let mut entries = Vec::new();
    for t in 0..len {
        for (c, ch) in table.channels().iter().enumerate() {
            if hidden[[t, c]] {
                entries.push(LedgerEntry {
                    t,
                    channel: ch.name.clone(),
                    true_value: values[[t, c]],
                });
                values[[t, c]] = f64::NAN;
            }
        }
    }
    let masked = table.with_values(values)?;
    let realized = table
        .channels()
        .iter()
        .enumerate()
        .map(|(c, ch)| ChannelRate {
            channel: ch.name.clone(),
            role: ch.role,
            rate: masked.missing_rate(c),
        })
        .collect();
    Ok(MaskOutcome {
        masked,
        ledger: Ledger { entries },
        realized,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Channel;

    fn table(len: usize) -> TimeSeriesTable {
        let chans = vec![
            Channel::new("x0", Role::State),
            Channel::new("x1", Role::State),
            Channel::new("u0", Role::Control),
            Channel::new("w0", Role::Exogenous),
        ];
        let values = Array2::from_shape_fn((len, 4), |(t, c)| (t * 4 + c) as f64 * 0.01);
        TimeSeriesTable::from_steps(chans, values).unwrap()
    }

    #[test]
    fn seeded_and_non_destructive() {
        let t = table(3000);
        let plan = MaskPlan::for_level(30, 5).unwrap();
        let a = generate_block_masks(&t, &plan).unwrap();
        let b = generate_block_masks(&t, &plan).unwrap();
        assert_eq!(a.masked, b.masked);
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(t.count_missing(), 0);
        assert!((a.state_rate() - plan.state_target).abs() <= plan.tolerance);
    }

    #[test]
    fn zero_cofailure_keeps_covariates() {
        let t = table(2000);
        let mut plan = MaskPlan::for_level(50, 1).unwrap();
        plan.cofailure_fraction = 0.0;
        let out = generate_block_masks(&t, &plan).unwrap();
        for c in t.covariate_indices() {
            assert_eq!(out.masked.missing_rate(c), 0.0);
        }
    }

    #[test]
    fn state_channels_masked_jointly_in_blocks() {
        let t = table(2000);
        let out = generate_block_masks(&t, &MaskPlan::for_level(20, 9).unwrap()).unwrap();
        for r in 0..t.len() {
            assert_eq!(out.masked.is_observed(r, 0), out.masked.is_observed(r, 1));
        }
        let covered: usize = out.blocks.iter().map(|b| b.1).sum();
        assert!(covered > 0);
    }

    #[test]
    fn never_unmasks_and_ledger_is_complete() {
        let mut v = table(1500).values().clone();
        for t in (0..1500).step_by(97) {
            v[[t, 0]] = f64::NAN;
            v[[t, 3]] = f64::NAN;
        }
        let t = table(1500).with_values(v).unwrap();
        let out = generate_block_masks(&t, &MaskPlan::for_level(40, 2).unwrap()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in &out.ledger.entries {
            let c = t.channel_index(&e.channel).unwrap();
            assert!(t.is_observed(e.t, c));
            assert!(!out.masked.is_observed(e.t, c));
            assert_eq!(e.true_value, t.values()[[e.t, c]]);
            assert!(seen.insert((e.t, c)));
        }
        let newly_missing = out.masked.count_missing() - t.count_missing();
        assert_eq!(newly_missing, out.ledger.len());
        for r in 0..t.len() {
            for c in 0..4 {
                if !t.is_observed(r, c) {
                    assert!(!out.masked.is_observed(r, c));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(MaskPlan::for_level(25, 0).is_err());
        let t = table(100);
        let mut v = t.values().clone();
        v.column_mut(0).fill(f64::NAN);
        v.column_mut(1).fill(f64::NAN);
        let all_missing = t.with_values(v).unwrap();
        assert!(matches!(
            generate_block_masks(&all_missing, &MaskPlan::for_level(20, 0).unwrap()),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn ledger_file_round_trip() {
        let t = table(400);
        let out = generate_block_masks(&t, &MaskPlan::for_level(20, 3).unwrap()).unwrap();
        let mut buf = Vec::new();
        out.ledger.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"t,channel,true_value\n"));
        assert_eq!(Ledger::read(buf.as_slice()).unwrap(), out.ledger);
    }
}
