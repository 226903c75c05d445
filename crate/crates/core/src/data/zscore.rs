use serde::{Deserialize, Serialize};

use super::table::TimeSeriesTable;
use crate::error::{Error, Result};

/// Per-channel mean and standard deviation fitted on observed entries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreStats {
    fn column_map(&self, table: &TimeSeriesTable) -> Result<Vec<usize>> {
        table
            .channels()
            .iter()
            .map(|c| {
                self.channels
                    .iter()
                    .position(|n| *n == c.name)
                    .ok_or_else(|| Error::Config(format!("no normalization statistics for channel `{}`", c.name)))
            })
            .collect()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|n| n == name)
    }

    pub fn normalize(&self, i: usize, v: f64) -> f64 {
        (v - self.mean[i]) / self.std[i]
    }

    pub fn denormalize(&self, i: usize, z: f64) -> f64 {
        z * self.std[i] + self.mean[i]
    }
}

/// Fits population mean/std per channel over observed entries.
///
/// A constant channel gets unit divisor (with a warning); an all-missing channel is an error.
pub fn zscore_fit(table: &TimeSeriesTable) -> Result<ZScoreStats> {
    let mut stats = ZScoreStats {
        channels: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for (c, ch) in table.channels().iter().enumerate() {
        let vals: Vec<f64> = (0..table.len()).filter_map(|t| table.get(t, c)).collect();
        if vals.is_empty() {
            return Err(Error::Fit(format!("channel `{}` has no observed values", ch.name)));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            log::warn!("channel `{}` is constant; using unit scale", ch.name);
            std = 1.0;
        }
        stats.channels.push(ch.name.clone());
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok(stats)
}

pub fn zscore_apply(table: &TimeSeriesTable, stats: &ZScoreStats) -> Result<TimeSeriesTable> {
    let map = stats.column_map(table)?;
    let mut values = table.values().clone();
    for (c, &s) in map.iter().enumerate() {
        values.column_mut(c).mapv_inplace(|v| stats.normalize(s, v));
    }
    table.with_values(values)
}

pub fn zscore_invert(table: &TimeSeriesTable, stats: &ZScoreStats) -> Result<TimeSeriesTable> {
    let map = stats.column_map(table)?;
    let mut values = table.values().clone();
    for (c, &s) in map.iter().enumerate() {
        values.column_mut(c).mapv_inplace(|v| stats.denormalize(s, v));
    }
    table.with_values(values)
}
