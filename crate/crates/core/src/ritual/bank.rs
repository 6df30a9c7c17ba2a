use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::DIMS;
use crate::{Error, Result};

/// One note of a looped pattern. Times are in beats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteSpec {
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
    /// Velocity at full volume, 0..=127.
    pub velocity: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MusicPattern {
    pub loop_beats: f64,
    pub notes: Vec<NoteSpec>,
}

/// A breakpoint of a light pulse, `phase` in [0, 1) of one pulse cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightPoint {
    pub phase: f64,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightShape {
    pub points: Vec<LightPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternBank {
    pub tempo_bpm: f64,
    pub patterns: Vec<MusicPattern>,
    pub lights: Vec<LightShape>,
}

impl PatternBank {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::PatternBank(msg));
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return bad(format!("tempo must be positive, got {}", self.tempo_bpm));
        }
        if self.patterns.len() != DIMS || self.lights.len() != DIMS {
            return bad(format!(
                "need {DIMS} patterns and {DIMS} light shapes, got {} and {}",
                self.patterns.len(),
                self.lights.len()
            ));
        }
        for (k, p) in self.patterns.iter().enumerate() {
            if !(p.loop_beats.is_finite() && p.loop_beats > 0.0) {
                return bad(format!("pattern {k}: loop length must be positive"));
            }
            for n in &p.notes {
                if !(0.0..p.loop_beats).contains(&n.onset) {
                    return bad(format!(
                        "pattern {k}: onset {} outside loop of {} beats",
                        n.onset, p.loop_beats
                    ));
                }
                if !(n.duration.is_finite() && n.duration > 0.0) || n.pitch > 127 || n.velocity > 127
                {
                    return bad(format!("pattern {k}: invalid note {n:?}"));
                }
            }
        }
        for (k, l) in self.lights.iter().enumerate() {
            if l.points.is_empty() {
                return bad(format!("light shape {k} has no points"));
            }
            if l.points.windows(2).any(|w| w[0].phase >= w[1].phase)
                || l.points
                    .iter()
                    .any(|p| !(0.0..1.0).contains(&p.phase) || !(0.0..=1.0).contains(&p.level))
            {
                return bad(format!(
                    "light shape {k}: phases must increase within [0, 1) and levels lie in [0, 1]"
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bank: PatternBank = serde_json::from_str(text).map_err(|e| Error::json("pattern bank", e))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn beat_seconds(&self) -> f64 {
        60.0 / self.tempo_bpm
    }
}

impl Default for PatternBank {
    /// Ten piano arpeggios in eighth notes over loops of 3 to 7 beats, and ten
    /// light pulse shapes, at 96 BPM.
    fn default() -> Self {
        const CHORDS: [(u8, &[u8]); DIMS] = [
            (45, &[0, 7, 12, 15, 19]),
            (48, &[0, 4, 7, 11]),
            (43, &[0, 7, 10, 14, 17]),
            (50, &[0, 3, 7, 10, 14]),
            (41, &[0, 7, 12, 16]),
            (52, &[0, 5, 7, 12]),
            (47, &[0, 3, 6, 10]),
            (53, &[0, 4, 7, 14, 16, 19]),
            (38, &[0, 7, 14, 15]),
            (55, &[0, 2, 7, 9, 12]),
        ];
        const LOOPS: [f64; DIMS] = [4.0, 3.0, 5.0, 4.0, 6.0, 3.0, 7.0, 4.0, 5.0, 6.0];

        let patterns = CHORDS
            .iter()
            .zip(LOOPS)
            .enumerate()
            .map(|(k, (&(root, chord), loop_beats))| {
                let steps = (loop_beats * 2.0) as usize;
                // up then back down the chord, accent on the downbeat
                let cycle: Vec<u8> = chord.iter().chain(chord[1..chord.len() - 1].iter().rev()).copied().collect();
                let notes = (0..steps)
                    .map(|j| NoteSpec {
                        pitch: root + cycle[(j + k) % cycle.len()],
                        onset: j as f64 * 0.5,
                        duration: 0.75,
                        velocity: if j % 2 == 0 { 96 } else { 72 },
                    })
                    .collect();
                MusicPattern { loop_beats, notes }
            })
            .collect();

        let pt = |phase, level| LightPoint { phase, level };
        let lights = vec![
            vec![pt(0.0, 1.0), pt(0.5, 0.0)],
            vec![pt(0.0, 0.0), pt(0.25, 0.5), pt(0.5, 1.0), pt(0.75, 0.5)],
            vec![pt(0.0, 1.0), pt(0.1, 0.6), pt(0.3, 0.2), pt(0.6, 0.0)],
            vec![pt(0.0, 0.2), pt(0.5, 1.0)],
            vec![pt(0.0, 1.0), pt(0.25, 0.0), pt(0.5, 1.0), pt(0.75, 0.0)],
            vec![pt(0.0, 0.5), pt(0.33, 1.0), pt(0.66, 0.5)],
            vec![pt(0.0, 0.0), pt(0.9, 1.0)],
            vec![pt(0.0, 1.0), pt(0.2, 0.8), pt(0.4, 0.6), pt(0.6, 0.4), pt(0.8, 0.2)],
            vec![pt(0.0, 0.3), pt(0.125, 1.0), pt(0.25, 0.3)],
            vec![pt(0.0, 0.6), pt(0.5, 0.9)],
        ]
        .into_iter()
        .map(|points| LightShape { points })
        .collect();

        PatternBank {
            tempo_bpm: 96.0,
            patterns,
            lights,
        }
    }
}
