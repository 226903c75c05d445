//! Classical gap fillers, per column and per table.
//!
//! Table-level baselines fill state channels only; covariates are never
//! imputation targets.

use super::kalman::{fit_local_level, ScalarStateSpace};
use crate::data::TimeSeriesTable;
use crate::error::{Error, Result};

fn require_observed(col: &[Option<f64>]) -> Result<()> {
    if col.iter().all(Option::is_none) {
        return Err(Error::Baseline("channel has no observed values".into()));
    }
    Ok(())
}

/// Last observation carried forward; leading gaps are back-filled.
pub fn locf_fill(col: &[Option<f64>]) -> Result<Vec<f64>> {
    require_observed(col)?;
    let first = col.iter().flatten().next().copied().expect("checked above");
    let mut last = first;
    Ok(col
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

/// Carry the nearest observation towards `target`, halving the distance every
/// `half_life` steps; forward from the previous observation, or backward from
/// the first one for leading gaps.
pub fn locf_decay_fill(col: &[Option<f64>], half_life: f64, target: f64) -> Result<Vec<f64>> {
    require_observed(col)?;
    let decay = |value: f64, dist: usize| target + (value - target) * 0.5f64.powf(dist as f64 / half_life);
    let first_idx = col.iter().position(Option::is_some).expect("checked above");
    let first = col[first_idx].expect("observed");
    let mut out = Vec::with_capacity(col.len());
    let mut last: Option<(usize, f64)> = None;
    for (t, v) in col.iter().enumerate() {
        match (v, last) {
            (Some(v), _) => {
                last = Some((t, *v));
                out.push(*v);
            }
            (None, Some((lt, lv))) => out.push(decay(lv, t - lt)),
            (None, None) => out.push(decay(first, first_idx - t)),
        }
    }
    Ok(out)
}

/// Straight line between flanking observations; constant extension at the edges.
pub fn linear_fill(col: &[Option<f64>]) -> Result<Vec<f64>> {
    require_observed(col)?;
    let obs: Vec<(usize, f64)> = col
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t, v)))
        .collect();
    let mut out = Vec::with_capacity(col.len());
    let mut next = 0;
    for t in 0..col.len() {
        while next < obs.len() && obs[next].0 < t {
            next += 1;
        }
        let v = if next < obs.len() && obs[next].0 == t {
            obs[next].1
        } else if next == 0 {
            obs[0].1
        } else if next == obs.len() {
            obs[obs.len() - 1].1
        } else {
            let (t0, v0) = obs[next - 1];
            let (t1, v1) = obs[next];
            v0 + (v1 - v0) * (t - t0) as f64 / (t1 - t0) as f64
        };
        out.push(v);
    }
    Ok(out)
}

/// Smoothed means of `model` at missing steps; observed steps keep their values.
pub fn kalman_fill_with(col: &[Option<f64>], model: &ScalarStateSpace, drive: Option<&[f64]>) -> Vec<f64> {
    let s = model.smooth(col, drive);
    col.iter().zip(s.mean).map(|(v, m)| v.unwrap_or(m)).collect()
}

/// Fits a local-level model by maximum likelihood and fills with smoothed means.
pub fn kalman_fill(col: &[Option<f64>]) -> Result<Vec<f64>> {
    let model = fit_local_level(col)?;
    Ok(kalman_fill_with(col, &model, None))
}

/// Causal variant: missing steps get the filtered (past-only) mean; leading
/// gaps are back-filled from the first observation.
pub fn kalman_filter_fill(col: &[Option<f64>]) -> Result<Vec<f64>> {
    let model = fit_local_level(col)?;
    let f = model.filter(col, None);
    let first_idx = col.iter().position(Option::is_some).expect("fit checked");
    Ok(col
        .iter()
        .enumerate()
        .map(|(t, v)| match v {
            Some(v) => *v,
            None if t < first_idx => col[first_idx].expect("observed"),
            None => f.filtered_mean[t],
        })
        .collect())
}

pub fn column_options(table: &TimeSeriesTable, c: usize) -> Vec<Option<f64>> {
    (0..table.len()).map(|t| table.get(t, c)).collect()
}

fn fill_states(table: &TimeSeriesTable, fill: impl Fn(&[Option<f64>]) -> Result<Vec<f64>>) -> Result<TimeSeriesTable> {
    let mut values = table.values().clone();
    for c in table.state_indices() {
        let col = column_options(table, c);
        let filled = fill(&col).map_err(|e| match e {
            Error::Baseline(msg) => Error::Baseline(format!("channel `{}`: {msg}", table.channels()[c].name)),
            other => other,
        })?;
        for (t, v) in filled.into_iter().enumerate() {
            if col[t].is_none() {
                values[[t, c]] = v;
            }
        }
    }
    table.with_values(values)
}

pub fn baseline_locf(table: &TimeSeriesTable) -> Result<TimeSeriesTable> {
    fill_states(table, locf_fill)
}

pub fn baseline_linear_interp(table: &TimeSeriesTable) -> Result<TimeSeriesTable> {
    fill_states(table, linear_fill)
}

pub fn baseline_kalman(table: &TimeSeriesTable) -> Result<TimeSeriesTable> {
    fill_states(table, kalman_fill)
}
