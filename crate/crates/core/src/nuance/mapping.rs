use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::store::NuanceTarget;
use crate::oscnet::{ControlAction, FeedbackDelta, Glissando, OscConfig, N_OSC};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct MappingConfig {
    /// Oscillator level at full tension.
    pub volume_ceiling: f64,
    /// Glissando speed at full abruptness, Hz/s.
    pub max_gliss_rate: f64,
    /// Glissando excursion at full abruptness, semitones.
    pub gliss_range_semitones: f64,
    /// Phase scatter at full abruptness, radians.
    pub max_phase_scatter: f64,
    /// Feedback multiplier reached at full relaxation.
    pub min_feedback_multiplier: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            volume_ceiling: 0.6,
            max_gliss_rate: 40.0,
            gliss_range_semitones: 1.0,
            max_phase_scatter: std::f64::consts::PI,
            min_feedback_multiplier: 0.2,
        }
    }
}

/// Turns nuance triples into oscillator-network control actions.
#[derive(Clone, Debug)]
pub struct ActionMapper {
    config: MappingConfig,
    base_freqs: [f64; N_OSC],
    channels: usize,
}

impl ActionMapper {
    pub fn new(config: MappingConfig, osc: &OscConfig) -> Self {
        ActionMapper {
            config,
            base_freqs: osc.base_frequencies(),
            channels: osc.channels,
        }
    }

    /// `round(tension * 20)` oscillators active, chosen by a seeded
    /// permutation (so raising tension only ever adds oscillators);
    /// glissando depth, phase scatter and spatial spread follow abruptness;
    /// feedback shrinks as relaxation grows.
    pub fn map(&self, nuance: NuanceTarget, rng_seed: u64) -> ControlAction {
        let clamp = |v: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        let tension = clamp(nuance.tension);
        let abrupt = clamp(nuance.abruptness);
        let relax = clamp(nuance.relaxation);
        let cfg = &self.config;

        // every random draw is made unconditionally, in a fixed order
        let mut rng = seed::rng(rng_seed);
        let mut order: Vec<usize> = (0..N_OSC).collect();
        order.shuffle(&mut rng);
        let detune: [f64; N_OSC] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let phase: [f64; N_OSC] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        let pan: [f64; N_OSC] = std::array::from_fn(|_| rng.random::<f64>());

        let n_active = (tension * N_OSC as f64).round() as usize;
        let (on, off) = order.split_at(n_active);
        let mut action = ControlAction {
            activate: on.iter().copied().collect(),
            mute: off.iter().copied().collect(),
            volume_targets: on.iter().map(|&i| (i, cfg.volume_ceiling * tension)).collect(),
            feedback_delta: Some(FeedbackDelta::Global(
                1.0 - relax * (1.0 - cfg.min_feedback_multiplier),
            )),
            ..Default::default()
        };
        if abrupt > 0.0 {
            for &i in on {
                let semis = detune[i] * cfg.gliss_range_semitones * abrupt;
                action.glissandi.insert(
                    i,
                    Glissando {
                        target: self.base_freqs[i] * 2f64.powf(semis / 12.0),
                        rate: cfg.max_gliss_rate * abrupt,
                    },
                );
                action
                    .phase_offsets
                    .insert(i, phase[i] * cfg.max_phase_scatter * abrupt);
            }
            action.diffusion_update = Some(self.diffusion(&pan, abrupt));
        }
        action
    }

    /// Pan each oscillator between its home position and a random one,
    /// further away the more abrupt the movement.
    fn diffusion(&self, pan: &[f64; N_OSC], spread: f64) -> Vec<Vec<f64>> {
        let c = self.channels;
        (0..N_OSC)
            .map(|i| {
                let mut row = vec![0.0; c];
                if c == 1 {
                    row[0] = 1.0;
                    return row;
                }
                let home = i as f64 / (N_OSC - 1) as f64;
                let p = (home + (pan[i] - home) * spread) * (c - 1) as f64;
                let left = (p.floor() as usize).min(c - 2);
                let frac = p - left as f64;
                row[left] = 1.0 - frac;
                row[left + 1] = frac;
                row
            })
            .collect()
    }
}

/// [`ActionMapper::map`] with the default oscillator layout.
pub fn map_to_actions(nuance: NuanceTarget, rng_seed: u64, config: &MappingConfig) -> ControlAction {
    ActionMapper::new(config.clone(), &OscConfig::default()).map(nuance, rng_seed)
}
