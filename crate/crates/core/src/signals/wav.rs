use std::path::Path;

use super::frame::{frames_from_samples, SignalFrame, SignalKind};
use crate::{Error, Result};

/// Load a RIFF WAV recording, one frame stream per channel.
///
/// Each channel is rescaled so that its absolute peak is 1 (an all-zero
/// channel stays zero).
pub fn load_recording(path: &Path, kind: SignalKind) -> Result<Vec<Vec<SignalFrame>>> {
    load_recording_with_gain(path, kind, None)
}

/// Like [`load_recording`], but with a fixed calibration gain applied instead
/// of peak normalisation. Samples are saturated to [-1, 1].
pub fn load_recording_with_gain(
    path: &Path,
    kind: SignalKind,
    gain: Option<f64>,
) -> Result<Vec<Vec<SignalFrame>>> {
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason,
    };
    if !(1..=4).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels (1-4 supported)", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<Result<_, _>>()
        }
        (format, bits) => {
            return Err(unsupported(format!("{bits}-bit {format:?} samples")));
        }
    }
    .map_err(|e| unsupported(e.to_string()))?;

    let n_channels = spec.channels as usize;
    if interleaved.len() < n_channels {
        return Err(Error::EmptyRecording(path.to_owned()));
    }
    let sample_rate = f64::from(spec.sample_rate);
    (0..n_channels)
        .map(|ch| {
            let mut samples: Vec<f64> = interleaved
                .iter()
                .skip(ch)
                .step_by(n_channels)
                .copied()
                .collect();
            if samples.iter().any(|v| !v.is_finite()) {
                return Err(unsupported(format!("non-finite sample on channel {ch}")));
            }
            let scale = match gain {
                Some(g) => g,
                None => {
                    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if peak > 0.0 {
                        1.0 / peak
                    } else {
                        1.0
                    }
                }
            };
            for s in &mut samples {
                *s = (*s * scale).clamp(-1.0, 1.0);
            }
            frames_from_samples(ch as u8, kind, sample_rate, &samples)
        })
        .collect()
}

/// Write interleaved float32 PCM.
pub fn write_wav_f32(
    path: &Path,
    interleaved: &[f32],
    channels: u16,
    sample_rate: u32,
) -> Result<()> {
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::InvalidArgument(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in interleaved {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
