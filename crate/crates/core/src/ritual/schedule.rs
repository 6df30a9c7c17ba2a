use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::bank::PatternBank;
use super::env::DIMS;
use super::proximity::AVDirective;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Event {
    Note {
        t: f64,
        pattern: usize,
        pitch: u8,
        velocity: u8,
        /// Seconds.
        dur: f64,
    },
    Light {
        t: f64,
        pattern: usize,
        level: f64,
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Note { t, .. } | Event::Light { t, .. } => *t,
        }
    }

    pub fn pattern(&self) -> usize {
        match self {
            Event::Note { pattern, .. } | Event::Light { pattern, .. } => *pattern,
        }
    }

    fn order(&self, other: &Event) -> Ordering {
        let key = |e: &Event| match e {
            Event::Note { pattern, pitch, .. } => (0, *pattern, *pitch),
            Event::Light { pattern, .. } => (1, *pattern, 0),
        };
        self.time()
            .total_cmp(&other.time())
            .then_with(|| key(self).cmp(&key(other)))
    }
}

#[derive(Clone, Copy, Debug)]
struct LightCycle {
    start_beat: u64,
    beats: u64,
}

/// Turns a time-ordered stream of directives into note and light events.
///
/// All ten music patterns loop concurrently from t = 0. A directive pushed
/// at time `t` takes effect on the first beat boundary at or after `t`.
/// Light pulse cycles start on beat boundaries and last a whole number of
/// beats chosen from the pulse rate in effect when the cycle starts.
#[derive(Clone, Debug)]
pub struct Scheduler {
    bank: PatternBank,
    beat: f64,
    clock: f64,
    /// (first beat in effect, directive), sorted by beat.
    directives: Vec<(u64, AVDirective)>,
    lights: [LightCycle; DIMS],
}

impl Scheduler {
    pub fn new(bank: PatternBank, initial: AVDirective) -> Result<Self> {
        bank.validate()?;
        let beat = bank.beat_seconds();
        let mut s = Scheduler {
            bank,
            beat,
            clock: 0.0,
            directives: vec![(0, initial)],
            lights: [LightCycle {
                start_beat: 0,
                beats: 1,
            }; DIMS],
        };
        for k in 0..DIMS {
            s.lights[k].beats = s.cycle_beats(k, 0);
        }
        Ok(s)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn bank(&self) -> &PatternBank {
        &self.bank
    }

    /// The directive in effect at the current clock.
    pub fn current(&self) -> &AVDirective {
        self.directive_at(self.clock)
    }

    /// Queue a directive change. Changes may not be scheduled in the past.
    pub fn push(&mut self, at: f64, directive: AVDirective) -> Result<()> {
        if !(at >= self.clock) {
            return Err(Error::ClockRegression {
                from: self.clock,
                to: at,
            });
        }
        let beat = self.next_beat(at);
        // a later push for the same beat replaces the earlier one
        let idx = self.directives.partition_point(|(b, _)| *b <= beat);
        if idx > 0 && self.directives[idx - 1].0 == beat {
            self.directives[idx - 1].1 = directive;
        } else {
            self.directives.insert(idx, (beat, directive));
        }
        Ok(())
    }

    /// Emit every event with time in `[clock, to)` in time order and move
    /// the clock to `to`.
    pub fn advance(&mut self, to: f64) -> Result<Vec<Event>> {
        if !(to >= self.clock) {
            return Err(Error::ClockRegression {
                from: self.clock,
                to,
            });
        }
        let from = self.clock;
        let mut events = Vec::new();
        for k in 0..DIMS {
            self.notes(k, from, to, &mut events);
            self.light(k, from, to, &mut events);
        }
        events.sort_by(Event::order);
        self.clock = to;
        self.prune();
        Ok(events)
    }

    fn next_beat(&self, t: f64) -> u64 {
        let x = t / self.beat;
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r as u64
        } else {
            x.ceil() as u64
        }
    }

    fn beat_time(&self, beat: u64) -> f64 {
        beat as f64 * self.beat
    }

    fn directive_for_beat(&self, beat: u64) -> &AVDirective {
        let idx = self.directives.partition_point(|(b, _)| *b <= beat);
        &self.directives[idx.max(1) - 1].1
    }

    fn directive_at(&self, t: f64) -> &AVDirective {
        // the beat containing t; a time on a boundary belongs to that beat
        let x = t / self.beat;
        let r = x.round();
        let beat = if (x - r).abs() < 1e-9 { r } else { x.floor() };
        self.directive_for_beat(beat.max(0.0) as u64)
    }

    fn cycle_beats(&self, pattern: usize, beat: u64) -> u64 {
        let rate = self.directive_for_beat(beat).entries[pattern].pulse_rate;
        let beat_rate = 1.0 / self.beat;
        ((beat_rate / rate).round() as u64).max(1)
    }

    fn notes(&self, k: usize, from: f64, to: f64, out: &mut Vec<Event>) {
        let pattern = &self.bank.patterns[k];
        let loop_s = pattern.loop_beats * self.beat;
        let first = ((from / loop_s).floor() as i64 - 1).max(0);
        let last = (to / loop_s).ceil() as i64;
        for m in first..=last {
            for note in &pattern.notes {
                let t = (m as f64 * pattern.loop_beats + note.onset) * self.beat;
                if t >= from && t < to {
                    let volume = self.directive_at(t).entries[k].volume.clamp(0.0, 1.0);
                    out.push(Event::Note {
                        t,
                        pattern: k,
                        pitch: note.pitch,
                        velocity: (f64::from(note.velocity) * volume).round() as u8,
                        dur: note.duration * self.beat,
                    });
                }
            }
        }
    }

    fn light(&mut self, k: usize, from: f64, to: f64, out: &mut Vec<Event>) {
        loop {
            let cycle = self.lights[k];
            for p in &self.bank.lights[k].points {
                let t = (cycle.start_beat as f64 + p.phase * cycle.beats as f64) * self.beat;
                if t >= from && t < to {
                    let brightness = self.directive_at(t).entries[k].brightness.clamp(0.0, 1.0);
                    out.push(Event::Light {
                        t,
                        pattern: k,
                        level: p.level * brightness,
                    });
                }
            }
            let next = cycle.start_beat + cycle.beats;
            // a cycle starting exactly at `to` may still be retargeted by a
            // push at `to`, so it is entered on the next call
            if self.beat_time(next) >= to {
                break;
            }
            self.lights[k] = LightCycle {
                start_beat: next,
                beats: self.cycle_beats(k, next),
            };
        }
    }

    fn prune(&mut self) {
        let beat = (self.clock / self.beat).floor() as u64;
        let oldest_light = self.lights.iter().map(|c| c.start_beat).min().unwrap_or(0);
        let keep_from = beat.min(oldest_light);
        let idx = self.directives.partition_point(|(b, _)| *b <= keep_from);
        if idx > 1 {
            self.directives.drain(..idx - 1);
        }
    }
}
