use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a channel contributes to the transition model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Imputed quantity `x_t`.
    State,
    /// Actuator or setpoint `u_t`.
    Control,
    /// External disturbance `w_t`.
    Exogenous,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::State => "state",
            Role::Control => "control",
            Role::Exogenous => "exogenous",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "state" => Ok(Role::State),
            "control" => Ok(Role::Control),
            "exogenous" => Ok(Role::Exogenous),
            other => Err(Error::Config(format!("unknown channel role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub role: Role,
}

impl Channel {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// Parses a timestamp cell: an integer step or an ISO-8601 date/time (seconds since epoch).
pub(crate) fn parse_timestamp(raw: &str) -> Result<i64> {
    let s = raw.trim();
    if let Ok(step) = s.parse::<i64>() {
        return Ok(step);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(Error::Ingestion(format!("unparseable timestamp `{raw}`")))
}

/// A regularly sampled multivariate series with per-channel roles.
///
/// Missing entries hold `NaN` and have a `false` observation flag; the two
/// always agree. Tables are immutable: every transform returns a new table.
#[derive(Debug, Clone)]
pub struct TimeSeriesTable {
    timestamps: Vec<String>,
    channels: Vec<Channel>,
    values: Array2<f64>,
    observed: Array2<bool>,
}

impl TimeSeriesTable {
    /// `values` is `(time, channel)`; `NaN` marks a missing entry.
    pub fn new(timestamps: Vec<String>, channels: Vec<Channel>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != timestamps.len() {
            return Err(Error::shape("table rows", timestamps.len(), values.nrows()));
        }
        if values.ncols() != channels.len() {
            return Err(Error::shape("table columns", channels.len(), values.ncols()));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Ingestion("table contains infinite values".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate channel `{}`", c.name)));
            }
        }
        validate_grid(&timestamps)?;
        let observed = values.mapv(|v| !v.is_nan());
        Ok(Self {
            timestamps,
            channels,
            values,
            observed,
        })
    }

    /// Integer step timestamps `0..len`.
    pub fn from_steps(channels: Vec<Channel>, values: Array2<f64>) -> Result<Self> {
        let ts = (0..values.nrows()).map(|t| t.to_string()).collect();
        Self::new(ts, channels, values)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn column(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.column(c)
    }

    pub fn get(&self, t: usize, c: usize) -> Option<f64> {
        self.observed[[t, c]].then(|| self.values[[t, c]])
    }

    pub fn is_observed(&self, t: usize, c: usize) -> bool {
        self.observed[[t, c]]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    /// Column indices of channels with `role`, in table order.
    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn state_indices(&self) -> Vec<usize> {
        self.indices(Role::State)
    }

    /// Control columns followed by exogenous columns.
    pub fn covariate_indices(&self) -> Vec<usize> {
        let mut idx = self.indices(Role::Control);
        idx.extend(self.indices(Role::Exogenous));
        idx
    }

    /// `(D_x, D_u, D_w)`
    pub fn role_dims(&self) -> (usize, usize, usize) {
        (
            self.indices(Role::State).len(),
            self.indices(Role::Control).len(),
            self.indices(Role::Exogenous).len(),
        )
    }

    pub fn state_fully_observed(&self, t: usize) -> bool {
        self.channels
            .iter()
            .enumerate()
            .all(|(c, ch)| ch.role != Role::State || self.observed[[t, c]])
    }

    /// Same timestamps and channels, new values (`NaN` = missing).
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::shape("replacement values", self.values.len(), values.len()));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Ingestion("table contains infinite values".into()));
        }
        let observed = values.mapv(|v| !v.is_nan());
        Ok(Self {
            timestamps: self.timestamps.clone(),
            channels: self.channels.clone(),
            values,
            observed,
        })
    }

    /// Same data with different role assignments.
    pub fn with_roles(&self, roles: &[(String, Role)]) -> Result<Self> {
        let mut channels = self.channels.clone();
        for (name, role) in roles {
            let c = channels
                .iter_mut()
                .find(|c| &c.name == name)
                .ok_or_else(|| Error::Config(format!("role map names unknown channel `{name}`")))?;
            c.role = *role;
        }
        Ok(Self {
            channels,
            ..self.clone()
        })
    }

    /// Fraction of missing entries in column `c`.
    pub fn missing_rate(&self, c: usize) -> f64 {
        let missing = self.observed.column(c).iter().filter(|o| !**o).count();
        missing as f64 / self.len().max(1) as f64
    }

    pub fn count_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }
}

/// Equal when layout, masks and every observed value (bitwise) agree.
impl PartialEq for TimeSeriesTable {
    fn eq(&self, other: &Self) -> bool {
        self.timestamps == other.timestamps
            && self.channels == other.channels
            && self.observed == other.observed
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.observed.iter())
                .all(|((a, b), o)| !*o || a.to_bits() == b.to_bits())
    }
}

fn validate_grid(timestamps: &[String]) -> Result<()> {
    if timestamps.len() < 2 {
        return Ok(());
    }
    let grid = timestamps
        .iter()
        .map(|t| parse_timestamp(t))
        .collect::<Result<Vec<_>>>()?;
    let step = grid[1] - grid[0];
    if step <= 0 {
        return Err(Error::Ingestion("timestamps must be strictly increasing".into()));
    }
    for (i, pair) in grid.windows(2).enumerate() {
        if pair[1] - pair[0] != step {
            return Err(Error::Ingestion(format!(
                "irregular sampling grid at row {}: `{}` -> `{}`",
                i + 1,
                timestamps[i],
                timestamps[i + 1]
            )));
        }
    }
    Ok(())
}
