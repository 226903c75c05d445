//! Model checkpoint container.
//!
//! Layout: one header line `STDIFF-CHECKPOINT <version>` followed by a JSON
//! document holding channel roles, schedule, normalization statistics and all
//! weights. Floats are written in shortest round-trip form and parsed with
//! exact rounding, so save/load is bit-exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Channel, Role, TimeSeriesTable, ZScoreStats};
use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::model::{ModelDenoiser, ModelParams};

pub const CHECKPOINT_MAGIC: &str = "STDIFF-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub channels: Vec<Channel>,
    pub schedule: ScheduleConfig,
    pub stats: ZScoreStats,
    pub params: ModelParams,
}

fn describe(channels: &[Channel]) -> String {
    let names = |role: Role| {
        channels
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
    };
    let (s, u, w) = (names(Role::State), names(Role::Control), names(Role::Exogenous));
    format!(
        "(D_x={}, D_u={}, D_w={}) [state: {}; control: {}; exogenous: {}]",
        s.len(),
        u.len(),
        w.len(),
        s.join(","),
        u.join(","),
        w.join(",")
    )
}

impl Checkpoint {
    pub fn new(table: &TimeSeriesTable, schedule: ScheduleConfig, stats: ZScoreStats, params: ModelParams) -> Self {
        Self {
            channels: table.channels().to_vec(),
            schedule,
            stats,
            params,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn denoiser(&self) -> Result<ModelDenoiser> {
        ModelDenoiser::new(self.params.clone(), self.schedule.steps)
    }

    /// Fails unless `table` has the same channels with the same roles, in any order.
    pub fn check_compatible(&self, table: &TimeSeriesTable) -> Result<()> {
        let mut mine: Vec<_> = self.channels.iter().map(|c| (c.role as u8, c.name.as_str())).collect();
        let mut theirs: Vec<_> = table.channels().iter().map(|c| (c.role as u8, c.name.as_str())).collect();
        mine.sort();
        theirs.sort();
        let by_role = |chs: &[Channel], role: Role| chs.iter().filter(|c| c.role == role).map(|c| c.name.clone()).collect::<Vec<_>>();
        let same_order = [Role::State, Role::Control, Role::Exogenous]
            .iter()
            .all(|&r| by_role(&self.channels, r) == by_role(table.channels(), r));
        if mine != theirs || !same_order {
            return Err(Error::Config(format!(
                "checkpoint dimensions {} do not match data dimensions {}",
                describe(&self.channels),
                describe(table.channels())
            )));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        serde_json::to_writer(&mut writer, self)?;
        writeln!(writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Checkpoint("missing checkpoint header".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("unreadable checkpoint version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let ckpt: Checkpoint = serde_json::from_reader(reader)?;
        ckpt.params.validate()?;
        ckpt.schedule.build()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}
