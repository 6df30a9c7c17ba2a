use serde::{Deserialize, Serialize};

use super::env::{RitualTarget, DIMS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct ProximityConfig {
    /// Distances up to and including this are the closest class.
    pub t_hi: f64,
    /// Distances up to and including this (and above `t_hi`) are the middle class.
    pub t_lo: f64,
    /// When false the scale is inverted: 1 means closest.
    pub closest_is_three: bool,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        ProximityConfig {
            t_hi: 0.5,
            t_lo: 2.0,
            closest_is_three: true,
        }
    }
}

impl ProximityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_hi.is_finite() && self.t_lo.is_finite() && 0.0 <= self.t_hi && self.t_hi < self.t_lo)
        {
            return Err(Error::InvalidArgument(format!(
                "proximity thresholds need 0 <= t_hi < t_lo, got t_hi={} t_lo={}",
                self.t_hi, self.t_lo
            )));
        }
        Ok(())
    }

    /// Quantize one distance.
    pub fn classify(&self, d: f64) -> u8 {
        let closeness = if d <= self.t_hi {
            3
        } else if d <= self.t_lo {
            2
        } else {
            1
        };
        if self.closest_is_three {
            closeness
        } else {
            4 - closeness
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProximityReport {
    pub time: f64,
    pub values: [u8; DIMS],
}

/// Per-dimension closeness of `position` to the target on the scale {1, 2, 3}.
pub fn proximity(
    time: f64,
    position: &[f64; DIMS],
    target: &RitualTarget,
    config: &ProximityConfig,
) -> ProximityReport {
    let values = std::array::from_fn(|i| {
        config.classify((position[i] - f64::from(target.digits[i])).abs())
    });
    ProximityReport { time, values }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct DirectiveConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Light pulse rate at the closest class, Hz.
    pub pulse_min: f64,
    /// Light pulse rate at the farthest class, Hz.
    pub pulse_max: f64,
    /// Set together with an inverted proximity scale so that "closer" still
    /// means quieter.
    pub closest_is_three: bool,
}

impl Default for DirectiveConfig {
    fn default() -> Self {
        DirectiveConfig {
            v_min: 0.1,
            v_max: 1.0,
            b_min: 0.05,
            b_max: 1.0,
            pulse_min: 0.5,
            pulse_max: 2.0,
            closest_is_three: true,
        }
    }
}

impl DirectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.v_min) && unit(self.v_max) && self.v_min < self.v_max) {
            return Err(Error::InvalidArgument(format!(
                "volume range needs 0 <= v_min < v_max <= 1, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if !(unit(self.b_min) && unit(self.b_max) && self.b_min < self.b_max) {
            return Err(Error::InvalidArgument(format!(
                "brightness range needs 0 <= b_min < b_max <= 1, got [{}, {}]",
                self.b_min, self.b_max
            )));
        }
        if !(self.pulse_min > 0.0 && self.pulse_min <= self.pulse_max && self.pulse_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pulse range needs 0 < pulse_min <= pulse_max, got [{}, {}]",
                self.pulse_min, self.pulse_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectiveEntry {
    pub pattern_id: usize,
    pub volume: f64,
    pub brightness: f64,
    pub pulse_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AVDirective {
    pub time: f64,
    pub entries: [DirectiveEntry; DIMS],
}

impl AVDirective {
    /// Every pattern at the given level.
    pub fn uniform(time: f64, volume: f64, brightness: f64, pulse_rate: f64) -> Self {
        AVDirective {
            time,
            entries: std::array::from_fn(|pattern_id| DirectiveEntry {
                pattern_id,
                volume,
                brightness,
                pulse_rate,
            }),
        }
    }
}

/// Map a proximity report to per-pattern volume, brightness and pulse rate.
/// Pattern `i` follows dimension `i`; closer is quieter and dimmer.
pub fn direct(report: &ProximityReport, config: &DirectiveConfig) -> AVDirective {
    let entries = std::array::from_fn(|i| {
        let p = f64::from(report.values[i]);
        // 0 at the closest class, 1 at the farthest
        let far = if config.closest_is_three { (3.0 - p) / 2.0 } else { (p - 1.0) / 2.0 };
        DirectiveEntry {
            pattern_id: i,
            volume: config.v_min + far * (config.v_max - config.v_min),
            brightness: config.b_min + far * (config.b_max - config.b_min),
            pulse_rate: config.pulse_min + far * (config.pulse_max - config.pulse_min),
        }
    });
    AVDirective {
        time: report.time,
        entries,
    }
}
