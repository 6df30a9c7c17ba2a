//! Movement descriptors computed from band-limited biosignals.
//!
//! Per channel: RMS envelope, its change rate and the spectral centroid over
//! the analysis band. Across channels: effort, abruptness, relaxation rate
//! and complexity (number of active channels), each normalised by
//! per-channel calibration maxima.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::regime::RegimeEstimate;
use crate::signals::{concat_samples, SignalFrame, SignalKind, ANALYSIS_HI_HZ, ANALYSIS_LO_HZ};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct FeatureParams {
    /// Analysis window, seconds.
    pub window: f64,
    /// Hop between feature frames, seconds.
    pub hop: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Activity threshold as a fraction of the calibrated envelope maximum.
    pub activity_fraction: f64,
    /// Window RMS below which the spectral centroid is reported absent.
    pub silence_rms: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            window: 0.2,
            hop: 0.025,
            band_lo: ANALYSIS_LO_HZ,
            band_hi: ANALYSIS_HI_HZ,
            activity_fraction: 0.1,
            silence_rms: 1e-4,
        }
    }
}

/// A uniformly sampled feature series; `values[k]` belongs to `t0 + k * hop`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series<T> {
    pub t0: f64,
    pub hop: f64,
    pub values: Vec<T>,
}

impl<T> Series<T> {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.hop
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct Framing {
    samples: Vec<f64>,
    sample_rate: f64,
    start: f64,
    window: usize,
    hop: usize,
}

impl Framing {
    fn new(frames: &[SignalFrame], window: f64, hop: f64, min_window: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
        let fs = first.sample_rate;
        if !(hop > 0.0 && window >= hop) {
            return Err(Error::InvalidArgument(format!(
                "need window >= hop > 0, got window {window}, hop {hop}"
            )));
        }
        let window_n = (window * fs).round() as usize;
        let hop_n = ((hop * fs).round() as usize).max(1);
        if window_n < min_window {
            return Err(Error::InvalidArgument(format!(
                "window of {window} s is shorter than {min_window} sample periods"
            )));
        }
        Ok(Framing {
            samples: concat_samples(frames),
            sample_rate: fs,
            start: first.start_time,
            window: window_n,
            hop: hop_n,
        })
    }

    fn count(&self) -> usize {
        self.samples.len() / self.hop
    }

    /// Window ending (exclusive) at hop boundary `k + 1`, zero-padded before
    /// the start of the stream.
    fn window_at(&self, k: usize, buf: &mut Vec<f64>) {
        let end = (k + 1) * self.hop;
        buf.clear();
        if end < self.window {
            buf.resize(self.window - end, 0.0);
            buf.extend_from_slice(&self.samples[..end]);
        } else {
            buf.extend_from_slice(&self.samples[end - self.window..end]);
        }
    }

    fn series<T>(&self, values: Vec<T>) -> Series<T> {
        let hop = self.hop as f64 / self.sample_rate;
        Series {
            t0: self.start + hop,
            hop,
            values,
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// RMS envelope: the value at time `t` is the RMS of the samples in
/// `[t - window, t]`, one value per hop.
pub fn envelope(frames: &[SignalFrame], window: f64, hop: f64) -> Result<Series<f64>> {
    let framing = Framing::new(frames, window, hop, 2)?;
    let mut buf = Vec::with_capacity(framing.window);
    let values = (0..framing.count())
        .map(|k| {
            framing.window_at(k, &mut buf);
            rms(&buf)
        })
        .collect();
    Ok(framing.series(values))
}

/// First derivative of an envelope in 1/s: centred differences inside,
/// one-sided at the ends.
pub fn change_rate(env: &Series<f64>) -> Result<Series<f64>> {
    let v = &env.values;
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "change rate needs at least two envelope points".into(),
        ));
    }
    let h = env.hop;
    let values = (0..n)
        .map(|i| match i {
            0 => (v[1] - v[0]) / h,
            i if i == n - 1 => (v[n - 1] - v[n - 2]) / h,
            i => (v[i + 1] - v[i - 1]) / (2.0 * h),
        })
        .collect();
    Ok(Series {
        t0: env.t0,
        hop: env.hop,
        values,
    })
}

/// Spectral centroid over `[lo, hi]` per window; `None` where the window is
/// silent.
pub fn spectral_centroid(
    frames: &[SignalFrame],
    window: f64,
    hop: f64,
    params: &FeatureParams,
) -> Result<Series<Option<f64>>> {
    let framing = Framing::new(frames, window, hop, 4)?;
    let fs = framing.sample_rate;
    // zero-pad to a fine bin grid so the weighted mean is not quantised
    let fft_len = framing
        .window
        .max((fs / 0.25).ceil() as usize)
        .next_power_of_two()
        .min(1 << 16)
        .max(framing.window.next_power_of_two());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let taper: Vec<f64> = (0..framing.window)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / framing.window as f64).cos())
        .collect();
    let bin_hz = fs / fft_len as f64;
    let lo_bin = (params.band_lo / bin_hz).ceil() as usize;
    let hi_bin = ((params.band_hi / bin_hz).floor() as usize).min(fft_len / 2);

    let mut buf = Vec::with_capacity(framing.window);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); fft_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let values = (0..framing.count())
        .map(|k| {
            framing.window_at(k, &mut buf);
            if rms(&buf) < params.silence_rms {
                return None;
            }
            spectrum.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (slot, (x, w)) in spectrum.iter_mut().zip(buf.iter().zip(&taper)) {
                *slot = Complex64::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut spectrum, &mut scratch);
            let (num, den) = (lo_bin..=hi_bin).fold((0.0, 0.0), |(num, den), b| {
                let mag = spectrum[b].norm();
                (num + b as f64 * bin_hz * mag, den + mag)
            });
            (den > 0.0).then(|| num / den)
        })
        .collect();
    Ok(framing.series(values))
}

/// Per-channel calibration maxima, captured during an operator-triggered
/// calibration pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCalibration {
    pub envelope_max: f64,
    pub rise_max: f64,
    pub fall_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub channels: Vec<ChannelCalibration>,
}

impl Calibration {
    /// Smallest maximum recorded by [`Calibration::capture`]; keeps a silent
    /// calibration pass usable.
    pub const FLOOR: f64 = 1e-6;

    /// Capture maxima from per-channel envelope and change-rate series.
    pub fn capture(channels: &[(Series<f64>, Series<f64>)]) -> Self {
        let channels = channels
            .iter()
            .map(|(env, rate)| ChannelCalibration {
                envelope_max: env.values.iter().fold(Self::FLOOR, |m, &v| m.max(v)),
                rise_max: rate.values.iter().fold(Self::FLOOR, |m, &v| m.max(v)),
                fall_max: rate.values.iter().fold(Self::FLOOR, |m, &v| m.max(-v)),
            })
            .collect();
        Calibration { channels }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelFeatures {
    pub channel_id: u8,
    pub kind: SignalKind,
    pub envelope: f64,
    pub change_rate: f64,
    pub spectral_centroid: Option<f64>,
    pub damping_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeEstimate>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Nuance {
    pub effort: f64,
    pub abruptness: f64,
    pub relaxation_rate: f64,
    pub complexity: usize,
}

/// One line of the feature log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub time: f64,
    pub channels: Vec<ChannelFeatures>,
    pub effort: f64,
    pub abruptness: f64,
    pub relaxation_rate: f64,
    pub complexity: usize,
}

impl FeatureVector {
    /// Numeric encoding used by the regression: the four aggregates followed
    /// by envelope, change rate, centroid and damping of every channel
    /// (absent values encoded as 0).
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = vec![
            self.effort,
            self.abruptness,
            self.relaxation_rate,
            self.complexity as f64,
        ];
        for c in &self.channels {
            row.extend([
                c.envelope,
                c.change_rate,
                c.spectral_centroid.unwrap_or(0.0),
                c.damping_ratio.unwrap_or(0.0),
            ]);
        }
        row
    }

    pub fn nuance(&self) -> Nuance {
        Nuance {
            effort: self.effort,
            abruptness: self.abruptness,
            relaxation_rate: self.relaxation_rate,
            complexity: self.complexity,
        }
    }
}

/// Combine one time slice of per-channel features into the aggregate
/// descriptors.
pub fn aggregate_nuance(
    channels: &[ChannelFeatures],
    calibration: &Calibration,
    activity_fraction: f64,
) -> Result<Nuance> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no channels to aggregate".into()));
    }
    if calibration.channels.len() < channels.len() {
        return Err(Error::InvalidArgument(format!(
            "calibration covers {} channels, features have {}",
            calibration.channels.len(),
            channels.len()
        )));
    }
    let mut effort = 0.0;
    let mut abruptness = 0.0f64;
    let mut relaxation = 0.0f64;
    let mut complexity = 0;
    for (i, (c, cal)) in channels.iter().zip(&calibration.channels).enumerate() {
        for (what, v) in [
            ("envelope", cal.envelope_max),
            ("rise rate", cal.rise_max),
            ("fall rate", cal.fall_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::Uncalibrated { what, channel: i });
            }
        }
        effort += c.envelope / cal.envelope_max;
        abruptness = abruptness.max(c.change_rate.max(0.0) / cal.rise_max);
        relaxation = relaxation.max((-c.change_rate).max(0.0) / cal.fall_max);
        if c.envelope > activity_fraction * cal.envelope_max {
            complexity += 1;
        }
    }
    Ok(Nuance {
        effort: (effort / channels.len() as f64).clamp(0.0, 1.0),
        abruptness: abruptness.clamp(0.0, 1.0),
        relaxation_rate: relaxation.clamp(0.0, 1.0),
        complexity,
    })
}

/// Per-channel feature series, computed once per channel.
#[derive(Clone, Debug)]
pub struct ChannelSeries {
    pub channel_id: u8,
    pub kind: SignalKind,
    pub envelope: Series<f64>,
    pub change_rate: Series<f64>,
    pub centroid: Series<Option<f64>>,
}

impl ChannelSeries {
    pub fn compute(frames: &[SignalFrame], params: &FeatureParams) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
        let envelope = envelope(frames, params.window, params.hop)?;
        let change_rate = change_rate(&envelope)?;
        let centroid = spectral_centroid(frames, params.window, params.hop, params)?;
        Ok(ChannelSeries {
            channel_id: first.channel_id,
            kind: first.kind,
            envelope,
            change_rate,
            centroid,
        })
    }
}

/// Regime estimates of one channel, for merging by timestamp.
#[derive(Clone, Debug)]
pub struct ChannelRegime<'a> {
    pub channel_id: u8,
    pub estimates: &'a [RegimeEstimate],
}

fn nearest_estimate(estimates: &[RegimeEstimate], t: f64, hop: f64) -> Option<&RegimeEstimate> {
    let idx = estimates.partition_point(|e| e.time < t);
    [idx.checked_sub(1), Some(idx)]
        .into_iter()
        .flatten()
        .filter_map(|i| estimates.get(i))
        .filter(|e| (e.time - t).abs() <= hop)
        .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
}

/// Merge per-channel series (and optional regime estimates) into a time
/// ordered sequence of feature vectors.
pub fn assemble(
    channels: &[ChannelSeries],
    regimes: &[ChannelRegime<'_>],
    calibration: &Calibration,
    params: &FeatureParams,
) -> Result<Vec<FeatureVector>> {
    let n = channels.iter().map(|c| c.envelope.len()).min().unwrap_or(0);
    (0..n)
        .map(|k| {
            let time = channels[0].envelope.time(k);
            let per_channel: Vec<ChannelFeatures> = channels
                .iter()
                .map(|c| {
                    let regime = regimes
                        .iter()
                        .find(|r| r.channel_id == c.channel_id)
                        .and_then(|r| nearest_estimate(r.estimates, time, params.hop))
                        .cloned();
                    ChannelFeatures {
                        channel_id: c.channel_id,
                        kind: c.kind,
                        envelope: c.envelope.values[k],
                        change_rate: c.change_rate.values[k],
                        spectral_centroid: c.centroid.values[k],
                        damping_ratio: regime.as_ref().filter(|r| r.valid).map(|r| r.zeta),
                        regime,
                    }
                })
                .collect();
            let nuance = aggregate_nuance(&per_channel, calibration, params.activity_fraction)?;
            Ok(FeatureVector {
                time,
                channels: per_channel,
                effort: nuance.effort,
                abruptness: nuance.abruptness,
                relaxation_rate: nuance.relaxation_rate,
                complexity: nuance.complexity,
            })
        })
        .collect()
}
