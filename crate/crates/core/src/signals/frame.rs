use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Samples per frame produced by the loaders and generators.
pub const FRAME_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    /// Electromyogram: muscle voltage.
    Emg,
    /// Mechanomyogram: mechanical vibration picked up by a contact microphone.
    Mmg,
}

impl SignalKind {
    pub fn default_sample_rate(self) -> f64 {
        match self {
            SignalKind::Emg => super::DEFAULT_EMG_RATE,
            SignalKind::Mmg => super::DEFAULT_MMG_RATE,
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "emg" => Ok(SignalKind::Emg),
            "mmg" => Ok(SignalKind::Mmg),
            other => Err(Error::InvalidArgument(format!("unknown signal kind '{other}'"))),
        }
    }
}

/// A timestamped block of one biosignal channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalFrame {
    pub channel_id: u8,
    pub kind: SignalKind,
    pub sample_rate: f64,
    pub start_time: f64,
    samples: Vec<f64>,
}

impl SignalFrame {
    pub fn new(
        channel_id: u8,
        kind: SignalKind,
        sample_rate: f64,
        start_time: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(start_time >= 0.0 && start_time.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "start time must be non-negative, got {start_time}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("frame has no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} is not finite or outside [-1, 1]"
            )));
        }
        Ok(SignalFrame {
            channel_id,
            kind,
            sample_rate,
            start_time,
            samples,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    /// Same frame metadata with replacement samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        SignalFrame::new(
            self.channel_id,
            self.kind,
            self.sample_rate,
            self.start_time,
            samples,
        )
    }
}

/// Split one channel's samples into frames of at most [`FRAME_LEN`] samples.
pub fn frames_from_samples(
    channel_id: u8,
    kind: SignalKind,
    sample_rate: f64,
    samples: &[f64],
) -> Result<Vec<SignalFrame>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("signal has no samples".into()));
    }
    samples
        .chunks(FRAME_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            let start = (i * FRAME_LEN) as f64 / sample_rate;
            SignalFrame::new(channel_id, kind, sample_rate, start, chunk.to_vec())
        })
        .collect()
}

pub fn concat_samples(frames: &[SignalFrame]) -> Vec<f64> {
    frames.iter().flat_map(|f| f.samples().iter().copied()).collect()
}

/// Check that consecutive frames of one channel are contiguous in time and
/// share their metadata.
pub fn check_contiguous(frames: &[SignalFrame]) -> Result<()> {
    for pair in frames.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.channel_id != b.channel_id || a.kind != b.kind || a.sample_rate != b.sample_rate {
            return Err(Error::InvalidArgument(
                "frames mix channels, kinds or sample rates".into(),
            ));
        }
        if (b.start_time - a.end_time()).abs() >= 1.0 / a.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "gap between frames at {} s and {} s",
                a.end_time(),
                b.start_time
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ContractionEvent {
    pub onset: f64,
    pub peak_level: f64,
    pub rise_time: f64,
    pub decay_time: f64,
}

/// Ground-truth contraction schedule for the generators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct ContractionProfile {
    pub events: Vec<ContractionEvent>,
    #[serde(default)]
    pub noise_floor: f64,
}

impl ContractionProfile {
    pub fn new(events: Vec<ContractionEvent>, noise_floor: f64) -> Result<Self> {
        let profile = ContractionProfile {
            events,
            noise_floor,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_floor) {
            return Err(Error::InvalidArgument(format!(
                "noise floor {} outside [0, 1]",
                self.noise_floor
            )));
        }
        for e in &self.events {
            if !(e.onset.is_finite() && e.onset >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid onset {}", e.onset)));
            }
            if !(0.0..=1.0).contains(&e.peak_level) {
                return Err(Error::InvalidArgument(format!(
                    "peak level {} outside [0, 1]",
                    e.peak_level
                )));
            }
            if !(e.rise_time > 0.0 && e.decay_time > 0.0) {
                return Err(Error::InvalidArgument(
                    "rise and decay times must be positive".into(),
                ));
            }
        }
        if self.events.windows(2).any(|w| w[1].onset <= w[0].onset) {
            return Err(Error::InvalidArgument(
                "event onsets must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let profile: ContractionProfile =
            serde_json::from_str(text).map_err(|e| Error::json("contraction profile", e))?;
        profile.validate()?;
        Ok(profile)
    }

    /// Regularly spaced identical events, handy for calibration signals.
    pub fn periodic(
        first_onset: f64,
        period: f64,
        count: usize,
        peak_level: f64,
        rise_time: f64,
        decay_time: f64,
    ) -> Result<Self> {
        let events = (0..count)
            .map(|i| ContractionEvent {
                onset: first_onset + i as f64 * period,
                peak_level,
                rise_time,
                decay_time,
            })
            .collect();
        ContractionProfile::new(events, 0.0)
    }

    /// Contraction envelope at time `t`: linear attack, exponential release.
    pub fn envelope_at(&self, t: f64) -> f64 {
        let mut level = 0.0;
        for e in &self.events {
            let dt = t - e.onset;
            if dt < 0.0 {
                break;
            }
            let v = if dt < e.rise_time {
                e.peak_level * dt / e.rise_time
            } else {
                e.peak_level * (-(dt - e.rise_time) / e.decay_time).exp()
            };
            level += v;
        }
        level.min(1.0)
    }
}
