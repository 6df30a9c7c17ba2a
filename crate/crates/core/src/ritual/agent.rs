use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::env::{AgentState, RitualEnv, DIMS};
use crate::seed::{self, Rng};
use crate::Result;

/// One move per step of an episode.
pub type ActionSequence = Vec<[f64; DIMS]>;

/// An agent that learns between episodes from a batch of evaluated
/// candidate action sequences.
pub trait EpisodicAgent {
    /// Candidate action sequences for the next episode, each `steps` long
    /// and within the environment's step bound.
    fn propose(&mut self, env: &RitualEnv, steps: usize) -> Vec<ActionSequence>;

    /// Update the policy from the returns of the proposed candidates.
    fn learn(&mut self, candidates: &[ActionSequence], returns: &[f64]);

    /// Current exploration scale.
    fn sigma(&self) -> f64;

    fn set_sigma(&mut self, sigma: f64);

    /// Flattened policy parameters, for logging.
    fn policy_params(&self) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    /// Initial exploration standard deviation, in units of position.
    pub sigma: f64,
    /// Multiplicative decay of sigma after every episode.
    pub sigma_decay: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 32,
            elite_fraction: 0.25,
            sigma: 0.5,
            sigma_decay: 0.99,
        }
    }
}

fn sample_sequence(
    rng: &mut Rng,
    mean: &[[f64; DIMS]],
    sigma: f64,
    bound: f64,
) -> ActionSequence {
    mean.iter()
        .map(|m| {
            std::array::from_fn(|d| {
                let z: f64 = StandardNormal.sample(rng);
                (m[d] + sigma * z).clamp(-bound, bound)
            })
        })
        .collect()
}

/// Cross-entropy method over whole-episode action sequences.
///
/// Each episode samples `population` sequences around the current mean,
/// keeps the best `elite_fraction` by return and moves the mean to their
/// average. The exploration scale decays geometrically.
#[derive(Clone, Debug)]
pub struct CemAgent {
    config: CemConfig,
    mean: Vec<[f64; DIMS]>,
    sigma: f64,
    rng: Rng,
}

impl CemAgent {
    pub fn new(config: CemConfig, seed_value: u64) -> Self {
        CemAgent {
            config,
            mean: Vec::new(),
            sigma: config.sigma,
            rng: seed::rng(seed_value),
        }
    }

    pub fn mean(&self) -> &[[f64; DIMS]] {
        &self.mean
    }
}

impl EpisodicAgent for CemAgent {
    fn propose(&mut self, env: &RitualEnv, steps: usize) -> Vec<ActionSequence> {
        self.mean.resize(steps, [0.0; DIMS]);
        (0..self.config.population.max(1))
            .map(|_| sample_sequence(&mut self.rng, &self.mean, self.sigma, env.max_step))
            .collect()
    }

    fn learn(&mut self, candidates: &[ActionSequence], returns: &[f64]) {
        if candidates.is_empty() {
            return;
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]));
        let n_elite = ((candidates.len() as f64 * self.config.elite_fraction).ceil() as usize)
            .clamp(1, candidates.len());
        let elites = &order[..n_elite];
        for (t, m) in self.mean.iter_mut().enumerate() {
            for (d, v) in m.iter_mut().enumerate() {
                *v = elites.iter().map(|&e| candidates[e][t][d]).sum::<f64>() / n_elite as f64;
            }
        }
        self.sigma *= self.config.sigma_decay;
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma.max(0.0);
    }

    fn policy_params(&self) -> Vec<f64> {
        self.mean.iter().flatten().copied().collect()
    }
}

/// Baseline: the same sampling budget with no learning at all.
#[derive(Clone, Debug)]
pub struct RandomSearch {
    population: usize,
    sigma: f64,
    rng: Rng,
}

impl RandomSearch {
    pub fn new(population: usize, sigma: f64, seed_value: u64) -> Self {
        RandomSearch {
            population,
            sigma,
            rng: seed::rng(seed_value),
        }
    }
}

impl EpisodicAgent for RandomSearch {
    fn propose(&mut self, env: &RitualEnv, steps: usize) -> Vec<ActionSequence> {
        let zero = vec![[0.0; DIMS]; steps];
        (0..self.population.max(1))
            .map(|_| sample_sequence(&mut self.rng, &zero, self.sigma, env.max_step))
            .collect()
    }

    fn learn(&mut self, _: &[ActionSequence], _: &[f64]) {}

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma.max(0.0);
    }

    fn policy_params(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// The performed path of one episode: position and reward after each step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<[f64; DIMS]>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    /// Highest reward reached by any candidate this episode.
    pub best_reward: f64,
    /// Smallest distance to the target over all episodes so far.
    pub best_distance: f64,
    /// Positions of the performed trajectory.
    pub positions: Vec<[f64; DIMS]>,
}

fn rollout(env: &RitualEnv, actions: &ActionSequence) -> Result<Trajectory> {
    let mut pos = env.start;
    let mut traj = Trajectory {
        positions: Vec::with_capacity(actions.len()),
        rewards: Vec::with_capacity(actions.len()),
    };
    for a in actions {
        let (next, r) = env.step(&pos, a)?;
        traj.positions.push(next);
        traj.rewards.push(r);
        pos = next;
    }
    Ok(traj)
}

/// Run one episode: every candidate is rolled out from the start position,
/// the highest-return candidate becomes the performed trajectory, and the
/// agent learns from all of them.
pub fn run_episode(
    agent: &mut dyn EpisodicAgent,
    env: &RitualEnv,
    state: &mut AgentState,
    steps: usize,
) -> Result<(Trajectory, EpisodeSummary)> {
    let candidates = agent.propose(env, steps);
    let rollouts = candidates
        .iter()
        .map(|c| rollout(env, c))
        .collect::<Result<Vec<_>>>()?;
    let returns: Vec<f64> = rollouts.iter().map(Trajectory::total_return).collect();
    let best = (0..rollouts.len())
        .reduce(|a, b| if returns[b] > returns[a] { b } else { a })
        .unwrap_or(0);
    let best_reward = rollouts
        .iter()
        .flat_map(|t| t.rewards.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let best_distance = rollouts
        .iter()
        .flat_map(|t| t.positions.iter())
        .map(|p| env.distance(p))
        .fold(state.best_distance, f64::min);
    agent.learn(&candidates, &returns);

    let performed = rollouts.into_iter().nth(best).unwrap_or_default();
    let summary = EpisodeSummary {
        episode: state.episode,
        best_reward,
        best_distance,
        positions: performed.positions.clone(),
    };
    if let Some(last) = performed.positions.last() {
        state.position = *last;
    }
    state.episode += 1;
    state.step += steps as u64;
    state.best_distance = best_distance;
    Ok((performed, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ritual::env::RitualTarget;

    fn env() -> RitualEnv {
        RitualEnv::new(RitualTarget::random(11), 1.0, [4.5; DIMS]).unwrap()
    }

    #[test]
    fn zero_exploration_repeats_itself() {
        let env = env();
        let mut agent = CemAgent::new(
            CemConfig {
                sigma: 0.0,
                ..Default::default()
            },
            1,
        );
        let mut state = AgentState::new(env.start, &env.target);
        let (first, _) = run_episode(&mut agent, &env, &mut state, 20).unwrap();
        for _ in 0..5 {
            let (t, _) = run_episode(&mut agent, &env, &mut state, 20).unwrap();
            assert_eq!(t, first);
        }
    }

    #[test]
    fn best_distance_is_monotone() {
        let env = env();
        let mut agent = CemAgent::new(CemConfig::default(), 2);
        let mut state = AgentState::new(env.start, &env.target);
        let mut last = state.best_distance;
        for _ in 0..30 {
            let (_, s) = run_episode(&mut agent, &env, &mut state, 50).unwrap();
            assert!(s.best_distance <= last);
            last = s.best_distance;
        }
        assert_eq!(state.episode, 30);
    }

    #[test]
    fn same_seed_same_run() {
        let env = env();
        let run = |seed| {
            let mut agent = CemAgent::new(CemConfig::default(), seed);
            let mut state = AgentState::new(env.start, &env.target);
            (0..5)
                .map(|_| run_episode(&mut agent, &env, &mut state, 10).unwrap().1)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn learning_beats_initial_episode() {
        let env = env();
        let mut agent = CemAgent::new(CemConfig::default(), 42);
        let mut state = AgentState::new(env.start, &env.target);
        let (_, first) = run_episode(&mut agent, &env, &mut state, 50).unwrap();
        for _ in 1..200 {
            run_episode(&mut agent, &env, &mut state, 50).unwrap();
        }
        assert!(state.best_distance < first.best_distance);
    }
}
