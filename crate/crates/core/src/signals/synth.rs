//! Synthetic EMG and MMG with known ground truth.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::filter::{Bandpass, BandpassSpec};
use super::frame::{frames_from_samples, ContractionProfile, SignalFrame, SignalKind};
use crate::seed;
use crate::{Error, Result};

/// RMS of the EMG carrier at full contraction. Leaves headroom so that the
/// Gaussian carrier is rarely clipped at [-1, 1].
const EMG_CARRIER_RMS: f64 = 0.3;

fn sample_count(duration: f64, sample_rate: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    Ok(((duration * sample_rate).round() as usize).max(1))
}

/// Surface EMG surrogate: band-limited Gaussian noise amplitude-modulated by
/// the contraction envelope of `profile`.
pub fn synth_emg(
    profile: &ContractionProfile,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<SignalFrame>> {
    profile.validate()?;
    let n = sample_count(duration, sample_rate)?;
    let mut rng = seed::rng(seed);
    let mut carrier: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    // Surface EMG energy sits roughly between 20 and 450 Hz.
    let hi = (0.45 * sample_rate).min(450.0);
    if hi > 40.0 {
        let spec = BandpassSpec {
            lo: 20.0,
            hi,
            order: 2,
        };
        Bandpass::new(spec, sample_rate)?.process_in_place(&mut carrier);
    }
    let rms = (carrier.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { EMG_CARRIER_RMS / rms } else { 0.0 };

    let samples: Vec<f64> = carrier
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let t = i as f64 / sample_rate;
            let env = (profile.envelope_at(t) + profile.noise_floor).min(1.0);
            (env * c * scale).clamp(-1.0, 1.0)
        })
        .collect();
    frames_from_samples(0, SignalKind::Emg, sample_rate, &samples)
}

/// Continuous-time damped oscillator `x'' + 2 zeta omega x' + omega^2 x = u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmgModel {
    pub zeta: f64,
    pub omega: f64,
}

impl MmgModel {
    pub fn new(zeta: f64, omega: f64) -> Result<Self> {
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "damping ratio must be non-negative, got {zeta}"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "natural frequency must be positive, got {omega}"
            )));
        }
        Ok(MmgModel { zeta, omega })
    }

    fn system_matrix(&self) -> [[f64; 2]; 2] {
        [
            [0.0, 1.0],
            [-self.omega * self.omega, -2.0 * self.zeta * self.omega],
        ]
    }

    /// State transition matrix `exp(A t)` of the free response.
    pub fn transition(&self, t: f64) -> [[f64; 2]; 2] {
        expm2(self.system_matrix(), t)
    }
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Matrix exponential of `a * t` by scaling and squaring a Taylor series.
fn expm2(a: [[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    let m = [[a[0][0] * t, a[0][1] * t], [a[1][0] * t, a[1][1] * t]];
    let norm = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    let m = [
        [m[0][0] * scale, m[0][1] * scale],
        [m[1][0] * scale, m[1][1] * scale],
    ];
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    for k in 1..=20 {
        term = mat_mul(&term, &m);
        let inv = 1.0 / k as f64;
        term = [
            [term[0][0] * inv, term[0][1] * inv],
            [term[1][0] * inv, term[1][1] * inv],
        ];
        for i in 0..2 {
            for j in 0..2 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result);
    }
    result
}

/// MMG surrogate: the damped oscillator excited by velocity impulses of
/// strength `peak_level` at every profile onset.
///
/// The free response is propagated with the exact state transition matrix,
/// so the sampled signal obeys the discrete two-pole recursion exactly
/// between excitations. The result is scaled so that its absolute peak
/// equals the largest event peak level, then `noise_floor` Gaussian noise is
/// added.
pub fn synth_mmg(
    zeta: f64,
    omega: f64,
    profile: &ContractionProfile,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<SignalFrame>> {
    let model = MmgModel::new(zeta, omega)?;
    profile.validate()?;
    let n = sample_count(duration, sample_rate)?;
    if omega / (2.0 * PI) >= sample_rate / 2.0 {
        return Err(Error::AboveNyquist { omega, sample_rate });
    }

    let dt = 1.0 / sample_rate;
    let step = model.transition(dt);
    let mut state = [0.0f64, 0.0f64];
    let mut events = profile.events.iter().peekable();
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        if i > 0 {
            state = [
                step[0][0] * state[0] + step[0][1] * state[1],
                step[1][0] * state[0] + step[1][1] * state[1],
            ];
        }
        while let Some(e) = events.next_if(|e| e.onset <= t) {
            let phi = model.transition(t - e.onset);
            state[0] += phi[0][1] * e.peak_level;
            state[1] += phi[1][1] * e.peak_level;
        }
        x.push(state[0]);
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = profile
        .events
        .iter()
        .fold(0.0f64, |m, e| m.max(e.peak_level));
    let gain = if peak > 0.0 { target / peak } else { 0.0 };

    let mut rng = seed::rng(seed);
    let samples: Vec<f64> = x
        .iter()
        .map(|v| {
            let noise = if profile.noise_floor > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                profile.noise_floor * z
            } else {
                0.0
            };
            (v * gain + noise).clamp(-1.0, 1.0)
        })
        .collect();
    frames_from_samples(0, SignalKind::Mmg, sample_rate, &samples)
}
