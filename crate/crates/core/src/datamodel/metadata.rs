use serde::{Deserialize, Serialize};

use super::TrackletRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRange {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl BinRange {
    /// Uniform-width bin of `value` after clamping to `[min, max]`; `max`
    /// itself lands in the last bin.
    pub fn bin(&self, value: f64) -> Result<usize> {
        if !(self.min < self.max) || self.bins == 0 {
            return Err(Error::DegenerateRange {
                min: self.min,
                max: self.max,
            });
        }
        let clamped = value.clamp(self.min, self.max);
        let width = (self.max - self.min) / self.bins as f64;
        let raw = ((clamped - self.min) / width).floor() as usize;
        Ok(raw.min(self.bins - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub altitude: BinRange,
    pub distance: BinRange,
    pub angle: BinRange,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            altitude: BinRange {
                min: 5.0,
                max: 120.0,
                bins: 18,
            },
            distance: BinRange {
                min: 10.0,
                max: 120.0,
                bins: 18,
            },
            angle: BinRange {
                min: 0.0,
                max: 90.0,
                bins: 3,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataBins {
    pub altitude_bin: usize,
    pub distance_bin: usize,
    pub angle_bin: usize,
}

pub fn discretize_metadata(record: &TrackletRecord, config: &BinConfig) -> Result<MetadataBins> {
    Ok(MetadataBins {
        altitude_bin: config.altitude.bin(record.altitude_m)?,
        distance_bin: config.distance.bin(record.distance_m)?,
        angle_bin: config.angle.bin(record.angle_deg)?,
    })
}
