//! The ritual run: the learning loop on this thread, the event scheduler on
//! another, coupled only by a time-ordered directive queue.

use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread;

use corpusnil_core::ritual::{
    direct, proximity, run_episode, AVDirective, AgentState, CemAgent, EpisodeSummary,
    EpisodicAgent, Event, PatternBank, ProximityReport, RandomSearch, RitualEnv, RitualTarget,
    Scheduler, Trajectory, DIMS,
};
use corpusnil_core::seed;
use serde::Serialize;

use crate::artifacts::{JsonlWriter, OutputDir};
use crate::config::{AgentKind, RitualConfig, SessionConfig};
use crate::error::{Result, SessionError};

/// Agent, environment and mapping for one ritual, steppable episode by
/// episode.
pub struct RitualSession {
    pub config: RitualConfig,
    pub env: RitualEnv,
    pub agent: Box<dyn EpisodicAgent + Send>,
    pub state: AgentState,
}

/// One performed agent step with everything the mapping derived from it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub episode: u64,
    pub step: u64,
    pub t: f64,
    pub position: [f64; DIMS],
    pub distance: f64,
    pub proximity: [u8; DIMS],
    pub volume: [f64; DIMS],
    pub brightness: [f64; DIMS],
    pub pulse_rate: [f64; DIMS],
}

impl RitualSession {
    pub fn new(config: &RitualConfig, master_seed: u64) -> Result<Self> {
        let target = match config.target {
            Some(d) => RitualTarget::new(d)?,
            None => RitualTarget::random(seed::derive(master_seed, "target")),
        };
        let env = RitualEnv::new(target, config.max_step, config.start)?;
        let agent_seed = seed::derive(master_seed, "agent");
        let agent: Box<dyn EpisodicAgent + Send> = match config.agent {
            AgentKind::Cem => Box::new(CemAgent::new(config.cem, agent_seed)),
            AgentKind::RandomSearch => Box::new(RandomSearch::new(
                config.cem.population,
                config.cem.sigma,
                agent_seed,
            )),
        };
        let state = AgentState::new(env.start, &env.target);
        Ok(RitualSession {
            config: config.clone(),
            env,
            agent,
            state,
        })
    }

    /// Event time of global step `n`.
    pub fn step_time(&self, n: u64) -> f64 {
        n as f64 / self.config.step_rate
    }

    pub fn run_episode(&mut self) -> Result<(Trajectory, EpisodeSummary)> {
        let steps = self.config.steps_per_episode;
        Ok(run_episode(
            self.agent.as_mut(),
            &self.env,
            &mut self.state,
            steps,
        )?)
    }

    /// Proximity and directive of one position.
    pub fn map(&self, t: f64, position: &[f64; DIMS]) -> (ProximityReport, AVDirective) {
        let report = proximity(t, position, &self.env.target, &self.config.proximity);
        let directive = direct(&report, &self.config.directive);
        (report, directive)
    }

    pub fn record(&self, episode: u64, step: u64, position: &[f64; DIMS]) -> (StepRecord, AVDirective) {
        let t = self.step_time(step);
        let (report, directive) = self.map(t, position);
        let record = StepRecord {
            episode,
            step,
            t,
            position: *position,
            distance: self.env.distance(position),
            proximity: report.values,
            volume: directive.entries.map(|e| e.volume),
            brightness: directive.entries.map(|e| e.brightness),
            pulse_rate: directive.entries.map(|e| e.pulse_rate),
        };
        (record, directive)
    }

    pub fn stop_reached(&self) -> bool {
        self.config
            .stop_distance
            .is_some_and(|d| self.state.best_distance <= d)
    }
}

pub fn load_bank(config: &RitualConfig) -> Result<PatternBank> {
    Ok(match &config.pattern_bank {
        Some(p) => PatternBank::load(p)?,
        None => PatternBank::default(),
    })
}

enum Cue {
    Directive(f64, AVDirective),
    Until(f64),
}

fn scheduler_thread(
    mut scheduler: Scheduler,
    mut log: JsonlWriter,
    udp: Option<(UdpSocket, String)>,
    cues: mpsc::Receiver<Cue>,
) -> Result<usize> {
    for cue in cues {
        match cue {
            Cue::Directive(t, d) => scheduler.push(t, d)?,
            Cue::Until(t) => {
                for event in scheduler.advance(t)? {
                    log.write(&event)?;
                    if let (Some((socket, addr)), Event::Light { .. }) = (&udp, &event) {
                        // best effort: a missing light controller must not
                        // stop the ritual
                        let line = serde_json::to_string(&event).unwrap_or_default();
                        if let Err(e) = socket.send_to(line.as_bytes(), addr) {
                            log::debug!("light datagram to {addr} failed: {e}");
                        }
                    }
                }
            }
        }
    }
    log.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RitualReport {
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub status: &'static str,
    pub target: [u8; DIMS],
    pub episodes: u64,
    pub steps: u64,
    pub events: usize,
    pub best_distance: f64,
    pub final_distance: f64,
}

pub fn run_ritual(config: &SessionConfig) -> Result<RitualReport> {
    let r = &config.ritual;
    let bank = load_bank(r)?;
    let mut session = RitualSession::new(r, config.seed)?;
    let out = OutputDir::create(&config.output_dir)?;
    out.write_json("config.json", config)?;

    let (_, initial) = session.map(0.0, &session.env.start);
    let scheduler = Scheduler::new(bank, initial)?;
    let udp = match &r.light_udp {
        Some(addr) => {
            let socket = UdpSocket::bind("0.0.0.0:0")
                .map_err(|e| SessionError::Config(format!("light UDP socket: {e}")))?;
            Some((socket, addr.clone()))
        }
        None => None,
    };
    let events_log = out.jsonl("logs/events.jsonl")?;
    let (tx, rx) = mpsc::channel();
    let worker = thread::spawn(move || scheduler_thread(scheduler, events_log, udp, rx));

    let mut episodes_log = out.jsonl("logs/episodes.jsonl")?;
    let mut steps_log = out.jsonl("logs/steps.jsonl")?;
    let mut step = 0u64;
    let mut final_distance = session.env.distance(&session.env.start);
    let mut status = "completed";
    let mut loop_result = Ok(());
    for _ in 0..r.episodes {
        let (trajectory, summary) = match session.run_episode() {
            Ok(v) => v,
            Err(e) => {
                loop_result = Err(e);
                break;
            }
        };
        for pos in &trajectory.positions {
            let (record, directive) = session.record(summary.episode, step, pos);
            steps_log.write(&record)?;
            // a closed queue means the scheduler failed; its error is
            // reported when it is joined below
            let _ = tx.send(Cue::Directive(record.t, directive));
            let _ = tx.send(Cue::Until(session.step_time(step + 1)));
            final_distance = record.distance;
            step += 1;
        }
        episodes_log.write(&summary)?;
        if session.stop_reached() {
            status = "target_reached";
            break;
        }
    }
    drop(tx);
    let events = worker
        .join()
        .map_err(|_| SessionError::Config("scheduler thread panicked".into()))??;
    loop_result?;
    episodes_log.finish()?;
    steps_log.finish()?;

    let report = RitualReport {
        output_dir: out.root().to_owned(),
        status,
        target: session.env.target.digits,
        episodes: session.state.episode,
        steps: step,
        events,
        best_distance: session.state.best_distance,
        final_distance,
    };
    out.write_json("logs/run.json", &report)?;
    let root = out.finish(config, status)?;
    Ok(RitualReport {
        output_dir: root,
        ..report
    })
}
