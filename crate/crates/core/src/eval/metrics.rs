//! Masked-entry error metrics.

use serde::{Deserialize, Serialize};

use crate::data::{Ledger, Role, TimeSeriesTable, ZScoreStats};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub level: Option<u32>,
    pub seed: Option<u64>,
    pub channels: Vec<ChannelMetrics>,
}

impl MetricsReport {
    /// Entry-weighted MAE over all channels.
    pub fn overall_mae(&self) -> f64 {
        let n: usize = self.channels.iter().map(|c| c.count).sum();
        self.channels.iter().map(|c| c.mae * c.count as f64).sum::<f64>() / n.max(1) as f64
    }

    /// Entry-weighted RMSE over all channels.
    pub fn overall_rmse(&self) -> f64 {
        let n: usize = self.channels.iter().map(|c| c.count).sum();
        let sq: f64 = self.channels.iter().map(|c| c.rmse * c.rmse * c.count as f64).sum();
        (sq / n.max(1) as f64).sqrt()
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|c| c.channel == name)
    }

    pub fn labelled(mut self, method: impl Into<String>, level: Option<u32>, seed: Option<u64>) -> Self {
        self.method = method.into();
        self.level = level;
        self.seed = seed;
        self
    }
}

fn accumulate(
    imputed: &TimeSeriesTable,
    ledger: &Ledger,
    transform: impl Fn(&str, f64) -> Result<f64>,
) -> Result<MetricsReport> {
    let states = imputed.state_indices();
    // (sum |e|, sum e^2, count) per state channel, in table order
    let mut acc = vec![(0.0f64, 0.0f64, 0usize); states.len()];
    for e in &ledger.entries {
        let Some(c) = imputed.channel_index(&e.channel) else {
            return Err(Error::Coverage(format!("ledger channel `{}` not in imputed table", e.channel)));
        };
        if imputed.channels()[c].role != Role::State {
            continue;
        }
        if e.t >= imputed.len() {
            return Err(Error::Coverage(format!("ledger row {} beyond table length {}", e.t, imputed.len())));
        }
        let est = imputed
            .get(e.t, c)
            .ok_or_else(|| Error::Coverage(format!("no imputed value for `{}` at t={}", e.channel, e.t)))?;
        let err = transform(&e.channel, est)? - transform(&e.channel, e.true_value)?;
        let slot = &mut acc[states.iter().position(|&s| s == c).expect("state channel")];
        slot.0 += err.abs();
        slot.1 += err * err;
        slot.2 += 1;
    }
    let channels = states
        .iter()
        .zip(acc)
        .filter(|(_, a)| a.2 > 0)
        .map(|(&c, (abs, sq, n))| ChannelMetrics {
            channel: imputed.channels()[c].name.clone(),
            mae: abs / n as f64,
            rmse: (sq / n as f64).sqrt(),
            count: n,
        })
        .collect();
    Ok(MetricsReport {
        method: String::new(),
        level: None,
        seed: None,
        channels,
    })
}

/// MAE and RMSE over ledger entries on state channels, in original units.
pub fn masked_mae_rmse(imputed: &TimeSeriesTable, ledger: &Ledger) -> Result<MetricsReport> {
    accumulate(imputed, ledger, |_, v| Ok(v))
}

/// Same as [`masked_mae_rmse`] but with errors measured in z-score units.
pub fn masked_mae_rmse_z(imputed: &TimeSeriesTable, ledger: &Ledger, stats: &ZScoreStats) -> Result<MetricsReport> {
    accumulate(imputed, ledger, |name, v| {
        let i = stats
            .index(name)
            .ok_or_else(|| Error::Config(format!("no normalization statistics for `{name}`")))?;
        Ok(stats.normalize(i, v))
    })
}

/// Writes reports as `method,level,seed,channel,mae,rmse,count` rows.
pub fn write_reports<W: std::io::Write>(reports: &[MetricsReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "level", "seed", "channel", "mae", "rmse", "count"])?;
    for r in reports {
        for c in &r.channels {
            w.write_record([
                r.method.clone(),
                r.level.map(|l| l.to_string()).unwrap_or_default(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                c.channel.clone(),
                c.mae.to_string(),
                c.rmse.to_string(),
                c.count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
