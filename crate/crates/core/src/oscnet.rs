//! Feedback network of twenty oscillators.
//!
//! Every oscillator's instantaneous frequency is its (slewed) base frequency
//! plus `mod_depth` times a gain-weighted sum of all oscillator outputs from
//! the previous sample. Outputs are soft-saturated before they are fed back
//! and again on each output channel, which bounds every rendered sample to
//! [-1, 1] whatever the gains.
//!
//! Control changes are only installed between blocks. Amplitude, frequency
//! and phase changes are slewed so that a control update never produces a
//! discontinuity in the waveform.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::sync::mpsc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub const N_OSC: usize = 20;
pub const MAX_CHANNELS: usize = 8;

/// Default pitch set in Hz (A minor pentatonic flavour over two octaves).
pub const DEFAULT_PITCHES: [f64; 7] = [55.0, 73.416, 82.407, 110.0, 123.471, 146.832, 164.814];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct OscConfig {
    pub sample_rate: f64,
    pub channels: usize,
    pub g_max: f64,
    /// Frequency deviation in Hz per unit of fed-back output.
    pub mod_depth: f64,
    /// Slew time for amplitude, frequency and phase changes, seconds.
    pub slew_time: f64,
    pub pitch_set: Vec<f64>,
    /// Microtonal detune steps applied to successive passes over the pitch
    /// set, in cents.
    pub detune_cents: Vec<f64>,
    pub gliss_range_semitones: f64,
    pub master_gain: f64,
    /// Level an oscillator takes when activated without a volume target.
    pub default_volume: f64,
    /// Upper bound of the random initial feedback gains, as a fraction of
    /// `g_max`.
    pub initial_feedback: f64,
    /// Linear range of the soft saturator.
    pub knee: f64,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for OscConfig {
    fn default() -> Self {
        OscConfig {
            sample_rate: 48_000.0,
            channels: 2,
            g_max: 0.8,
            mod_depth: 20.0,
            slew_time: 0.05,
            pitch_set: DEFAULT_PITCHES.to_vec(),
            detune_cents: vec![0.0, 14.0, -14.0],
            gliss_range_semitones: 1.0,
            master_gain: 0.5,
            default_volume: 0.5,
            initial_feedback: 0.2,
            knee: 0.5,
            block_size: 256,
            seed: 0,
        }
    }
}

impl OscConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate {} must be positive", self.sample_rate));
        }
        if !(1..=MAX_CHANNELS).contains(&self.channels) {
            return bad(format!("channels {} outside 1..={MAX_CHANNELS}", self.channels));
        }
        if !(self.g_max >= 0.0 && self.g_max.is_finite()) {
            return bad(format!("g_max {} must be non-negative", self.g_max));
        }
        if self.pitch_set.is_empty() || self.pitch_set.iter().any(|p| !(*p > 0.0)) {
            return bad("pitch set must be non-empty and positive".into());
        }
        if self.detune_cents.is_empty() {
            return bad("detune list must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.master_gain) || !(0.0..=1.0).contains(&self.default_volume)
        {
            return bad("gains must lie in [0, 1]".into());
        }
        if !(self.knee > 0.0 && self.knee < 1.0) {
            return bad(format!("knee {} must lie in (0, 1)", self.knee));
        }
        if !(self.slew_time >= 0.0) || self.block_size == 0 {
            return bad("slew time must be non-negative and block size positive".into());
        }
        Ok(())
    }

    /// Base frequency of each oscillator: the pitch set cycled, each pass
    /// detuned by the next entry of `detune_cents`.
    pub fn base_frequencies(&self) -> [f64; N_OSC] {
        std::array::from_fn(|i| {
            let pitch = self.pitch_set[i % self.pitch_set.len()];
            let pass = (i / self.pitch_set.len()) % self.detune_cents.len();
            pitch * 2f64.powf(self.detune_cents[pass] / 1200.0)
        })
    }
}

/// Soft saturator: identity inside `[-knee, knee]`, tanh-shaped towards ±1
/// outside. Continuous with unit slope at the knee.
#[inline]
pub fn soft_clip(x: f64, knee: f64) -> f64 {
    let a = x.abs();
    if a <= knee {
        x
    } else {
        let span = 1.0 - knee;
        (knee + span * ((a - knee) / span).tanh()).copysign(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Glissando {
    /// Target frequency, Hz.
    pub target: f64,
    /// Hz per second; 0 means "over one slew time".
    pub rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainDelta {
    pub i: usize,
    pub j: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackDelta {
    /// Gains become this multiple of the reference gain matrix.
    Global(f64),
    /// Per-entry additive changes to the current gains.
    Sparse(Vec<GainDelta>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlAction {
    pub activate: BTreeSet<usize>,
    pub mute: BTreeSet<usize>,
    pub volume_targets: BTreeMap<usize, f64>,
    pub phase_offsets: BTreeMap<usize, f64>,
    pub glissandi: BTreeMap<usize, Glissando>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_delta: Option<FeedbackDelta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_update: Option<Vec<Vec<f64>>>,
}

impl ControlAction {
    pub fn mute_all() -> Self {
        ControlAction {
            mute: (0..N_OSC).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let indices = self
            .activate
            .iter()
            .chain(&self.mute)
            .chain(self.volume_targets.keys())
            .chain(self.phase_offsets.keys())
            .chain(self.glissandi.keys());
        for &i in indices {
            if i >= N_OSC {
                return Err(Error::OscIndex(i));
            }
        }
        if let Some(FeedbackDelta::Sparse(deltas)) = &self.feedback_delta {
            if let Some(d) = deltas.iter().find(|d| d.i >= N_OSC || d.j >= N_OSC) {
                return Err(Error::OscIndex(d.i.max(d.j)));
            }
        }
        let finite = self
            .volume_targets
            .values()
            .chain(self.phase_offsets.values())
            .all(|v| v.is_finite());
        let gliss_ok = self
            .glissandi
            .values()
            .all(|g| g.target > 0.0 && g.target.is_finite() && g.rate >= 0.0 && g.rate.is_finite());
        let feedback_ok = match &self.feedback_delta {
            Some(FeedbackDelta::Global(m)) => m.is_finite() && *m >= 0.0,
            Some(FeedbackDelta::Sparse(d)) => d.iter().all(|d| d.delta.is_finite()),
            None => true,
        };
        if !(finite && gliss_ok && feedback_ok) {
            return Err(Error::InvalidArgument("control action has invalid values".into()));
        }
        if let Some(m) = &self.diffusion_update {
            if m.len() != N_OSC
                || m.iter().any(|row| {
                    row.len() != channels || row.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                })
            {
                return Err(Error::InvalidArgument(format!(
                    "diffusion matrix must be {N_OSC}x{channels} with non-negative weights"
                )));
            }
        }
        Ok(())
    }
}

/// Linear ramp towards a target over a fixed number of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Ramp {
    step: f64,
    remaining: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscState {
    pub index: usize,
    pub base_freq: f64,
    /// Current (slewed) frequency before feedback modulation.
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
    pub active: bool,
    pub gliss_target: f64,
    pub gliss_rate: f64,
    /// Level used while active.
    pub volume: f64,
    #[serde(skip)]
    amp_target: f64,
    #[serde(skip)]
    amp_ramp: Ramp,
    #[serde(skip)]
    phase_ramp: Ramp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscSnapshotEntry {
    pub index: usize,
    pub freq: f64,
    pub amp: f64,
    pub active: bool,
}

/// Console view of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscSnapshot {
    pub oscillators: Vec<OscSnapshotEntry>,
    pub feedback_gain: Vec<Vec<f64>>,
    pub master_gain: f64,
}

/// Interleaved multichannel audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBlock {
    pub channels: usize,
    pub samples: Vec<f32>,
}

impl AudioBlock {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().skip(c).step_by(self.channels).copied()
    }
}

#[derive(Clone, Debug)]
pub struct OscNetwork {
    config: OscConfig,
    oscillators: Vec<OscState>,
    reference_gain: [[f64; N_OSC]; N_OSC],
    feedback_gain: [[f64; N_OSC]; N_OSC],
    diffusion: Vec<Vec<f64>>,
    prev_out: [f64; N_OSC],
    slew_samples: u32,
    samples_rendered: u64,
}

impl OscNetwork {
    /// A network with every oscillator muted, seeded random reference gains
    /// and an evenly spread linear-pan diffusion.
    pub fn new(config: OscConfig) -> Result<Self> {
        config.validate()?;
        let bases = config.base_frequencies();
        let oscillators = bases
            .iter()
            .enumerate()
            .map(|(index, &base)| OscState {
                index,
                base_freq: base,
                freq: base,
                phase: 0.0,
                amp: 0.0,
                active: false,
                gliss_target: base,
                gliss_rate: 0.0,
                volume: config.default_volume,
                amp_target: 0.0,
                amp_ramp: Ramp::default(),
                phase_ramp: Ramp::default(),
            })
            .collect();
        let mut rng = seed::rng(seed::derive(config.seed, "oscnet.gains"));
        let upper = config.initial_feedback * config.g_max;
        let mut reference_gain = [[0.0; N_OSC]; N_OSC];
        for (i, row) in reference_gain.iter_mut().enumerate() {
            for (j, g) in row.iter_mut().enumerate() {
                // draw even on the diagonal so the sequence does not depend on layout
                let v: f64 = rng.random::<f64>() * upper;
                if i != j {
                    *g = v;
                }
            }
        }
        let diffusion = default_diffusion(config.channels);
        let slew_samples = (config.slew_time * config.sample_rate).round() as u32;
        Ok(OscNetwork {
            config,
            oscillators,
            reference_gain,
            feedback_gain: reference_gain,
            diffusion,
            prev_out: [0.0; N_OSC],
            slew_samples,
            samples_rendered: 0,
        })
    }

    pub fn config(&self) -> &OscConfig {
        &self.config
    }

    pub fn oscillators(&self) -> &[OscState] {
        &self.oscillators
    }

    pub fn feedback_gain(&self) -> &[[f64; N_OSC]; N_OSC] {
        &self.feedback_gain
    }

    pub fn diffusion(&self) -> &[Vec<f64>] {
        &self.diffusion
    }

    pub fn samples_rendered(&self) -> u64 {
        self.samples_rendered
    }

    pub fn active_count(&self) -> usize {
        self.oscillators.iter().filter(|o| o.active).count()
    }

    /// Set one feedback gain (and its reference value). Values outside
    /// `[0, g_max]` are rejected and leave the network unchanged.
    pub fn set_gain(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= N_OSC || j >= N_OSC {
            return Err(Error::OscIndex(i.max(j)));
        }
        if !(0.0..=self.config.g_max).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "gain {value} outside [0, {}]",
                self.config.g_max
            )));
        }
        self.feedback_gain[i][j] = value;
        self.reference_gain[i][j] = value;
        Ok(())
    }

    pub fn apply(&mut self, action: &ControlAction) -> Result<()> {
        action.validate(self.config.channels)?;
        let slew = self.slew_samples;
        let g_max = self.config.g_max;
        let range = 2f64.powf(self.config.gliss_range_semitones / 12.0);

        for &i in &action.activate {
            self.oscillators[i].active = true;
        }
        for &i in &action.mute {
            self.oscillators[i].active = false;
        }
        for (&i, &v) in &action.volume_targets {
            self.oscillators[i].volume = v.clamp(0.0, 1.0);
        }
        for osc in &mut self.oscillators {
            let target = if osc.active { osc.volume } else { 0.0 };
            if target != osc.amp_target {
                osc.amp_target = target;
                osc.amp_ramp = ramp(osc.amp, target, slew);
                if osc.amp_ramp.remaining == 0 {
                    osc.amp = target;
                }
            }
        }
        for (&i, &offset) in &action.phase_offsets {
            let osc = &mut self.oscillators[i];
            let pending = osc.phase_ramp.step * f64::from(osc.phase_ramp.remaining);
            osc.phase_ramp = ramp(0.0, pending + offset, slew);
            if osc.phase_ramp.remaining == 0 {
                osc.phase = (osc.phase + offset).rem_euclid(TAU);
            }
        }
        for (&i, g) in &action.glissandi {
            let osc = &mut self.oscillators[i];
            osc.gliss_target = g.target.clamp(osc.base_freq / range, osc.base_freq * range);
            osc.gliss_rate = if g.rate > 0.0 {
                g.rate
            } else if self.config.slew_time > 0.0 {
                (osc.gliss_target - osc.freq).abs() / self.config.slew_time
            } else {
                f64::INFINITY
            };
        }
        match &action.feedback_delta {
            Some(FeedbackDelta::Global(m)) => {
                for i in 0..N_OSC {
                    for j in 0..N_OSC {
                        self.feedback_gain[i][j] = (self.reference_gain[i][j] * m).clamp(0.0, g_max);
                    }
                }
            }
            Some(FeedbackDelta::Sparse(deltas)) => {
                for d in deltas {
                    let g = &mut self.feedback_gain[d.i][d.j];
                    *g = (*g + d.delta).clamp(0.0, g_max);
                }
            }
            None => {}
        }
        if let Some(m) = &action.diffusion_update {
            self.diffusion = m
                .iter()
                .map(|row| {
                    let sum: f64 = row.iter().sum();
                    if sum > 1.0 {
                        row.iter().map(|w| w / sum).collect()
                    } else {
                        row.clone()
                    }
                })
                .collect();
        }
        Ok(())
    }

    /// Render `n_samples` frames of interleaved audio.
    pub fn render(&mut self, n_samples: usize) -> AudioBlock {
        let mut out = vec![0.0f32; n_samples * self.config.channels];
        self.render_into(&mut out);
        AudioBlock {
            channels: self.config.channels,
            samples: out,
        }
    }

    /// Render into an interleaved buffer whose length is a multiple of the
    /// channel count; the block-callback entry point for live output.
    pub fn render_into(&mut self, out: &mut [f32]) {
        let channels = self.config.channels;
        let fs = self.config.sample_rate;
        let knee = self.config.knee;
        let mod_depth = self.config.mod_depth;
        let master = self.config.master_gain;
        let mut fb = [0.0f64; N_OSC];
        let mut live = [0usize; N_OSC];
        let mut cur = [0.0f64; N_OSC];
        let mut mix = [0.0f64; MAX_CHANNELS];

        for frame in out.chunks_exact_mut(channels) {
            let mut n_live = 0;
            for (j, &y) in self.prev_out.iter().enumerate() {
                if y != 0.0 {
                    fb[j] = soft_clip(y, knee);
                    live[n_live] = j;
                    n_live += 1;
                }
            }
            for (i, osc) in self.oscillators.iter_mut().enumerate() {
                if osc.amp_ramp.remaining > 0 {
                    osc.amp_ramp.remaining -= 1;
                    osc.amp = if osc.amp_ramp.remaining == 0 {
                        osc.amp_target
                    } else {
                        (osc.amp + osc.amp_ramp.step).clamp(0.0, 1.0)
                    };
                }
                if osc.freq != osc.gliss_target {
                    let step = osc.gliss_rate / fs;
                    let diff = osc.gliss_target - osc.freq;
                    osc.freq = if diff.abs() <= step {
                        osc.gliss_target
                    } else {
                        osc.freq + step.copysign(diff)
                    };
                }
                if osc.phase_ramp.remaining > 0 {
                    osc.phase_ramp.remaining -= 1;
                    osc.phase += osc.phase_ramp.step;
                }
                let row = &self.feedback_gain[i];
                let modulation: f64 = live[..n_live].iter().map(|&j| row[j] * fb[j]).sum();
                cur[i] = osc.amp * osc.phase.sin();
                let inst = osc.freq + mod_depth * modulation;
                osc.phase = (osc.phase + TAU * inst / fs).rem_euclid(TAU);
            }
            let mix = &mut mix[..channels];
            mix.iter_mut().for_each(|m| *m = 0.0);
            for (i, &y) in cur.iter().enumerate() {
                if y != 0.0 {
                    for (m, w) in mix.iter_mut().zip(&self.diffusion[i]) {
                        *m += w * y;
                    }
                }
            }
            for (slot, m) in frame.iter_mut().zip(mix.iter()) {
                *slot = soft_clip(master * m, knee) as f32;
            }
            self.prev_out = cur;
        }
        self.samples_rendered += (out.len() / channels) as u64;
    }

    pub fn snapshot(&self) -> OscSnapshot {
        OscSnapshot {
            oscillators: self
                .oscillators
                .iter()
                .map(|o| OscSnapshotEntry {
                    index: o.index,
                    freq: o.freq,
                    amp: o.amp,
                    active: o.active,
                })
                .collect(),
            feedback_gain: self.feedback_gain.iter().map(|r| r.to_vec()).collect(),
            master_gain: self.config.master_gain,
        }
    }
}

fn ramp(from: f64, to: f64, samples: u32) -> Ramp {
    if samples == 0 || from == to {
        Ramp::default()
    } else {
        Ramp {
            step: (to - from) / samples as f64,
            remaining: samples,
        }
    }
}

fn default_diffusion(channels: usize) -> Vec<Vec<f64>> {
    (0..N_OSC)
        .map(|i| {
            let mut row = vec![0.0; channels];
            if channels == 1 {
                row[0] = 1.0;
                return row;
            }
            let pos = i as f64 / (N_OSC - 1) as f64 * (channels - 1) as f64;
            let left = (pos.floor() as usize).min(channels - 2);
            let frac = pos - left as f64;
            row[left] = 1.0 - frac;
            row[left + 1] = frac;
            row
        })
        .collect()
}

/// Renders a network block by block, installing queued control actions only
/// at block boundaries.
pub struct BlockRenderer {
    net: OscNetwork,
    actions: mpsc::Receiver<ControlAction>,
}

impl BlockRenderer {
    pub fn new(net: OscNetwork) -> (Self, mpsc::Sender<ControlAction>) {
        let (tx, rx) = mpsc::channel();
        (BlockRenderer { net, actions: rx }, tx)
    }

    pub fn network(&self) -> &OscNetwork {
        &self.net
    }

    /// Block callback: drain pending actions, then fill `out`. Malformed
    /// actions are logged and skipped.
    pub fn process(&mut self, out: &mut [f32]) {
        while let Ok(action) = self.actions.try_recv() {
            if let Err(e) = self.net.apply(&action) {
                log::warn!("dropping control action: {e}");
            }
        }
        self.net.render_into(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;

    fn net() -> OscNetwork {
        OscNetwork::new(OscConfig {
            sample_rate: 16_000.0,
            ..Default::default()
        })
        .unwrap()
    }

    fn rms(block: &AudioBlock) -> f64 {
        (block.samples.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>()
            / block.samples.len() as f64)
            .sqrt()
    }

    #[test]
    fn starts_muted_and_silent() {
        let mut n = net();
        assert_eq!(n.oscillators().len(), N_OSC);
        assert!(n.render(1000).samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mute_all_reaches_silence() {
        let mut n = net();
        n.apply(&ControlAction {
            activate: (0..N_OSC).collect(),
            ..Default::default()
        })
        .unwrap();
        assert!(rms(&n.render(4000)) > 0.01);
        n.apply(&ControlAction::mute_all()).unwrap();
        n.render(800); // slew time at 16 kHz
        let after = n.render(4000);
        assert!(rms(&after) < 1e-4);
        assert!(after.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn volume_target_after_slew() {
        let mut n = net();
        n.apply(&ControlAction {
            activate: [3].into(),
            volume_targets: [(3, 0.5)].into(),
            ..Default::default()
        })
        .unwrap();
        n.render(400);
        assert!(n.oscillators()[3].amp > 0.0 && n.oscillators()[3].amp < 0.5);
        n.render(400);
        assert!((n.oscillators()[3].amp - 0.5).abs() < 1e-3);
    }

    #[test]
    fn amplitude_never_jumps() {
        let mut n = net();
        n.apply(&ControlAction {
            activate: [0].into(),
            volume_targets: [(0, 1.0)].into(),
            ..Default::default()
        })
        .unwrap();
        let mut prev = 0.0;
        for _ in 0..1000 {
            n.render(1);
            let amp = n.oscillators()[0].amp;
            assert!((amp - prev).abs() <= 1.0 / 800.0 + 1e-12);
            prev = amp;
        }
    }

    #[test]
    fn feedback_is_clipped_to_gmax() {
        let mut n = net();
        n.apply(&ControlAction {
            feedback_delta: Some(FeedbackDelta::Sparse(vec![GainDelta {
                i: 1,
                j: 2,
                delta: 5.0,
            }])),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(n.feedback_gain()[1][2], 0.8);
        n.apply(&ControlAction {
            feedback_delta: Some(FeedbackDelta::Global(100.0)),
            ..Default::default()
        })
        .unwrap();
        assert!(n.feedback_gain().iter().flatten().all(|&g| (0.0..=0.8).contains(&g)));
    }

    #[test]
    fn rejects_bad_indices_and_gains() {
        let mut n = net();
        let err = n
            .apply(&ControlAction {
                activate: [20].into(),
                ..Default::default()
            })
            .unwrap_err();
        assert!(matches!(err, Error::OscIndex(20)));
        let before = *n.feedback_gain();
        assert!(n.set_gain(0, 1, 0.9).is_err());
        assert!(n.set_gain(0, 1, -0.1).is_err());
        assert!(n.set_gain(0, 20, 0.1).is_err());
        assert_eq!(&before, n.feedback_gain());
        n.set_gain(0, 1, 0.3).unwrap();
        assert_eq!(n.feedback_gain()[0][1], 0.3);
    }

    #[test]
    fn single_oscillator_is_a_clean_sine() {
        let fs = 16_000.0;
        let mut n = net();
        assert_eq!(n.oscillators()[3].base_freq, 110.0);
        n.apply(&ControlAction {
            activate: [3].into(),
            feedback_delta: Some(FeedbackDelta::Global(0.0)),
            ..Default::default()
        })
        .unwrap();
        n.render(1600);
        let block = n.render(fs as usize);
        let x: Vec<f64> = block.channel(0).map(f64::from).collect();
        let len = x.len();
        let mut spec: Vec<Complex64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = 0.5 - 0.5 * (TAU * i as f64 / len as f64).cos();
                Complex64::new(v * w, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(len).process(&mut spec);
        let mag: Vec<f64> = spec[..len / 2].iter().map(|c| c.norm()).collect();
        let peak = (1..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        assert!((peak as f64 - 110.0).abs() <= 1.0, "peak bin {peak}");
        let band = |f: usize| mag[f - 2..=f + 2].iter().map(|m| m * m).sum::<f64>().sqrt();
        let fundamental = band(110);
        let harmonics = (2..=10).map(|h| band(110 * h).powi(2)).sum::<f64>().sqrt();
        assert!(harmonics / fundamental < 0.01);
    }

    #[test]
    fn block_splits_are_sample_exact() {
        let setup = || {
            let mut n = net();
            n.apply(&ControlAction {
                activate: (0..N_OSC).collect(),
                feedback_delta: Some(FeedbackDelta::Global(3.0)),
                ..Default::default()
            })
            .unwrap();
            n
        };
        let mut a = setup();
        let mut b = setup();
        let whole = a.render(2000).samples;
        let mut halves = b.render(1000).samples;
        halves.extend(b.render(1000).samples);
        assert_eq!(whole, halves);
    }

    #[test]
    fn queued_actions_apply_at_block_boundary() {
        let (mut renderer, tx) = BlockRenderer::new(net());
        tx.send(ControlAction {
            activate: [0].into(),
            ..Default::default()
        })
        .unwrap();
        let mut buf = vec![0.0f32; 512];
        renderer.process(&mut buf);
        assert!(renderer.network().oscillators()[0].active);
        assert!(buf.iter().any(|&s| s != 0.0));
    }

    fn arb_action() -> impl Strategy<Value = ControlAction> {
        (
            proptest::collection::btree_set(0usize..N_OSC, 0..N_OSC),
            proptest::collection::btree_set(0usize..N_OSC, 0..5),
            proptest::collection::btree_map(0usize..N_OSC, 0.0f64..1.0, 0..N_OSC),
            proptest::collection::btree_map(0usize..N_OSC, -6.0f64..6.0, 0..4),
            proptest::collection::btree_map(
                0usize..N_OSC,
                (20.0f64..400.0, 0.0f64..200.0).prop_map(|(target, rate)| Glissando { target, rate }),
                0..4,
            ),
            prop_oneof![
                Just(None),
                (0.0f64..20.0).prop_map(|m| Some(FeedbackDelta::Global(m))),
                proptest::collection::vec(
                    (0usize..N_OSC, 0usize..N_OSC, -1.0f64..1.0)
                        .prop_map(|(i, j, delta)| GainDelta { i, j, delta }),
                    0..10
                )
                .prop_map(|d| Some(FeedbackDelta::Sparse(d))),
            ],
        )
            .prop_map(|(activate, mute, volume_targets, phase_offsets, glissandi, feedback_delta)| {
                ControlAction {
                    activate,
                    mute,
                    volume_targets,
                    phase_offsets,
                    glissandi,
                    feedback_delta,
                    diffusion_update: None,
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_stays_bounded(actions in proptest::collection::vec(arb_action(), 1..8)) {
            let mut n = net();
            for a in &actions {
                n.apply(a).unwrap();
                let block = n.render(256);
                prop_assert!(block.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
                prop_assert_eq!(n.oscillators().len(), N_OSC);
                prop_assert!(n.feedback_gain().iter().flatten().all(|&g| (0.0..=0.8).contains(&g)));
            }
        }
    }
}
