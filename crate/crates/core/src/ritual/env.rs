use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

pub const DIMS: usize = 10;
pub const MAX_COORD: f64 = 9.0;

/// Ten digits the agent is asked to find. They mean nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RitualTarget {
    pub digits: [u8; DIMS],
}

impl RitualTarget {
    pub fn new(digits: [u8; DIMS]) -> Result<Self> {
        if let Some(d) = digits.iter().find(|&&d| d > 9) {
            return Err(Error::InvalidArgument(format!("digit {d} outside 0..=9")));
        }
        Ok(RitualTarget { digits })
    }

    pub fn from_slice(digits: &[u8]) -> Result<Self> {
        let digits: [u8; DIMS] = digits.try_into().map_err(|_| {
            Error::InvalidArgument(format!("target needs {DIMS} digits, got {}", digits.len()))
        })?;
        RitualTarget::new(digits)
    }

    pub fn random(seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value);
        RitualTarget {
            digits: std::array::from_fn(|_| rng.random_range(0..=9u8)),
        }
    }

    pub fn as_point(&self) -> [f64; DIMS] {
        self.digits.map(f64::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: [f64; DIMS],
    pub episode: u64,
    pub step: u64,
    /// Smallest distance to the target seen so far.
    pub best_distance: f64,
}

impl AgentState {
    pub fn new(position: [f64; DIMS], target: &RitualTarget) -> Self {
        let position = position.map(|p| p.clamp(0.0, MAX_COORD));
        AgentState {
            position,
            episode: 0,
            step: 0,
            best_distance: distance(&position, &target.as_point()),
        }
    }
}

pub(crate) fn distance(a: &[f64; DIMS], b: &[f64; DIMS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Deterministic environment: moves are bounded deltas inside `[0, 9]^10`,
/// reward is minus the normalised distance to the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RitualEnv {
    pub target: RitualTarget,
    pub max_step: f64,
    pub start: [f64; DIMS],
}

impl RitualEnv {
    pub fn new(target: RitualTarget, max_step: f64, start: [f64; DIMS]) -> Result<Self> {
        if !(max_step > 0.0 && max_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max step must be positive, got {max_step}"
            )));
        }
        Ok(RitualEnv {
            target,
            max_step,
            start: start.map(|p| p.clamp(0.0, MAX_COORD)),
        })
    }

    /// Largest possible distance, the diagonal of the box.
    pub fn max_distance() -> f64 {
        MAX_COORD * (DIMS as f64).sqrt()
    }

    pub fn distance(&self, position: &[f64; DIMS]) -> f64 {
        distance(position, &self.target.as_point())
    }

    pub fn reward(&self, position: &[f64; DIMS]) -> f64 {
        -self.distance(position) / Self::max_distance()
    }

    /// Apply one move; returns the new position and its reward in [-1, 0].
    pub fn step(&self, position: &[f64; DIMS], action: &[f64]) -> Result<([f64; DIMS], f64)> {
        if action.len() != DIMS {
            return Err(Error::InvalidArgument(format!(
                "action has {} components, expected {DIMS}",
                action.len()
            )));
        }
        if let Some(a) = action
            .iter()
            .find(|a| !a.is_finite() || a.abs() > self.max_step + 1e-12)
        {
            return Err(Error::InvalidArgument(format!(
                "action component {a} exceeds max step {}",
                self.max_step
            )));
        }
        let next: [f64; DIMS] =
            std::array::from_fn(|i| (position[i] + action[i]).clamp(0.0, MAX_COORD));
        let reward = self.reward(&next);
        Ok((next, reward))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(digits: [u8; DIMS], start: [f64; DIMS]) -> RitualEnv {
        RitualEnv::new(RitualTarget::new(digits).unwrap(), 1.0, start).unwrap()
    }

    #[test]
    fn reward_zero_at_target() {
        let e = env([3; DIMS], [3.0; DIMS]);
        let (p, r) = e.step(&[3.0; DIMS], &[0.0; DIMS]).unwrap();
        assert_eq!(p, [3.0; DIMS]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn reward_minus_one_at_opposite_corner() {
        let e = env([0; DIMS], [9.0; DIMS]);
        let (_, r) = e.step(&[9.0; DIMS], &[0.5; DIMS]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn moving_toward_target_improves_reward() {
        let e = env([2; DIMS], [8.0; DIMS]);
        let mut pos = [8.0; DIMS];
        let mut last = e.reward(&pos);
        for _ in 0..5 {
            let (p, r) = e.step(&pos, &[-1.0; DIMS]).unwrap();
            assert!(r > last);
            last = r;
            pos = p;
        }
    }

    #[test]
    fn step_validates_action() {
        let e = env([2; DIMS], [8.0; DIMS]);
        assert!(e.step(&[0.0; DIMS], &[0.0; 9]).is_err());
        assert!(e.step(&[0.0; DIMS], &[1.5; DIMS]).is_err());
    }

    #[test]
    fn positions_are_clipped() {
        let e = env([2; DIMS], [8.0; DIMS]);
        let (p, _) = e.step(&[8.5; DIMS], &[1.0; DIMS]).unwrap();
        assert_eq!(p, [9.0; DIMS]);
    }

    #[test]
    fn target_validation() {
        assert!(RitualTarget::new([10; DIMS]).is_err());
        assert!(RitualTarget::from_slice(&[1, 2, 3]).is_err());
        let t = RitualTarget::random(4);
        assert_eq!(t, RitualTarget::random(4));
        assert!(t.digits.iter().all(|&d| d <= 9));
    }
}
