//! The authoritative engine: replays the configured signal sources through
//! the instrument pipeline and steps the ritual, both in engine time, and
//! applies operator commands between ticks.

use std::collections::VecDeque;
use std::time::{SystemTime, UNIX_EPOCH};

use corpusnil_core::features::FeatureVector;
use corpusnil_core::nuance::{train, DemoStore, Demonstration, NuanceTarget};
use corpusnil_core::regime::RegimeEstimate;
use corpusnil_session::{
    analyze, load_model, load_sources, Analysis, Performer, RitualSession, SessionConfig,
    StepRecord,
};
use serde_json::{json, Value};

use crate::protocol::{Command, Label};
use crate::BridgeError;

/// A state frame for one stream; the service wraps it in an envelope per
/// connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: &'static str,
    pub payload: Value,
}

/// Stream periods in ticks: features and regime every tick, the slower
/// streams every fourth.
pub const SLOW_EVERY: u64 = 4;

struct Recording {
    id: String,
    label: NuanceTarget,
    rows: Vec<FeatureVector>,
}

struct Episode {
    records: VecDeque<StepRecord>,
    summary: Value,
}

pub struct Engine {
    config: SessionConfig,
    running: bool,
    ticks: u64,

    analysis: Analysis,
    /// Engine seconds of corpus replay; the source loops.
    corpus_t: f64,
    cursor: usize,
    regime_cursors: Vec<usize>,
    loops: u64,
    performer: Performer,
    rendered: u64,
    store: DemoStore,
    recording: Option<Recording>,
    last_features: Option<FeatureVector>,
    last_regime: Vec<Value>,
    mapping_error_logged: bool,

    ritual: RitualSession,
    ritual_t: f64,
    ritual_step: u64,
    paused: bool,
    episode: Option<Episode>,
    last_proximity: Option<StepRecord>,
    last_episode: Option<Value>,
    ritual_done: bool,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

impl Engine {
    pub fn new(config: SessionConfig) -> Result<Self, BridgeError> {
        let c = &config.corpus;
        let channels = load_sources(c, config.seed)?;
        let analysis = analyze(&channels, c)?;
        let model = c.nuance_model.as_deref().map(load_model).transpose()?;
        let performer = Performer::new(model, c, config.seed)?;
        let store = match &c.demos_dir {
            Some(dir) => DemoStore::open(dir).map_err(corpusnil_session::SessionError::from)?,
            None => DemoStore::in_memory(),
        };
        let ritual = RitualSession::new(&config.ritual, config.seed)?;
        let regime_cursors = vec![0; analysis.regimes.len()];
        Ok(Engine {
            config,
            running: false,
            ticks: 0,
            analysis,
            corpus_t: 0.0,
            cursor: 0,
            regime_cursors,
            loops: 0,
            performer,
            rendered: 0,
            store,
            recording: None,
            last_features: None,
            last_regime: Vec::new(),
            mapping_error_logged: false,
            ritual,
            ritual_t: 0.0,
            ritual_step: 0,
            paused: false,
            episode: None,
            last_proximity: None,
            last_episode: None,
            ritual_done: false,
        })
    }

    pub fn running(&self) -> bool {
        self.running
    }

    /// Advance engine time by `dt` seconds and return this tick's frames.
    pub fn tick(&mut self, dt: f64) -> Vec<Frame> {
        let mut frames = Vec::new();
        if self.running {
            let (features, regime) = self.advance_corpus(dt);
            if let Some(fv) = features {
                frames.push(Frame {
                    kind: "features",
                    payload: to_value(&fv),
                });
            }
            if let Some(r) = regime {
                frames.push(Frame {
                    kind: "regime",
                    payload: r,
                });
            }
            if !self.paused {
                frames.extend(self.advance_ritual(dt));
            }
        }
        if self.ticks % SLOW_EVERY == 0 {
            frames.push(Frame {
                kind: "oscnet_state",
                payload: self.oscnet_state(),
            });
            if let Some(p) = &self.last_proximity {
                frames.push(Frame {
                    kind: "ritual_proximity",
                    payload: to_value(p),
                });
            }
        }
        self.ticks += 1;
        frames
    }

    /// Newest feature vector and regime estimates that became due.
    fn advance_corpus(&mut self, dt: f64) -> (Option<FeatureVector>, Option<Value>) {
        self.corpus_t += dt;
        let duration = self.analysis.duration;
        let n = self.analysis.features.len();
        if n == 0 || !(duration > 0.0) {
            return (None, None);
        }
        let mut newest = None;
        let mut newest_regime = false;
        loop {
            let offset = self.loops as f64 * duration;
            if self.cursor == n {
                if self.corpus_t < offset + duration {
                    break;
                }
                self.cursor = 0;
                self.regime_cursors.iter_mut().for_each(|c| *c = 0);
                self.loops += 1;
                continue;
            }
            let fv = &self.analysis.features[self.cursor];
            if offset + fv.time > self.corpus_t {
                break;
            }
            let mut fv = fv.clone();
            fv.time += offset;
            self.perform(&fv);
            if let Some(rec) = &mut self.recording {
                rec.rows.push(fv.clone());
            }
            newest = Some(fv);
            self.cursor += 1;
        }
        // regime estimates on their own clock
        let offset = self.loops as f64 * duration;
        for (k, (channel, estimates)) in self.analysis.regimes.iter().enumerate() {
            let c = &mut self.regime_cursors[k];
            let mut latest: Option<&RegimeEstimate> = None;
            while *c < estimates.len() && offset + estimates[*c].time <= self.corpus_t {
                latest = Some(&estimates[*c]);
                *c += 1;
            }
            if let Some(e) = latest {
                let mut e = e.clone();
                e.time += offset;
                let mut v = to_value(&e);
                v["channel"] = json!(channel);
                match self.last_regime.iter_mut().find(|r| r["channel"] == json!(channel)) {
                    Some(slot) => *slot = v,
                    None => self.last_regime.push(v),
                }
                newest_regime = true;
            }
        }
        self.render_until(self.corpus_t);
        if newest.is_some() {
            self.last_features = newest.clone();
        }
        let regime = newest_regime.then(|| json!({ "estimates": self.last_regime }));
        (newest, regime)
    }

    fn perform(&mut self, fv: &FeatureVector) {
        if self.performer.model().is_none() {
            return;
        }
        let t = fv.time;
        self.render_until(t);
        if let Err(e) = self.performer.perform(fv) {
            // a model of the wrong width keeps failing; say so once
            if !self.mapping_error_logged {
                log::warn!("nuance mapping failed at t={t:.3}: {e}");
                self.mapping_error_logged = true;
            }
        }
    }

    /// Keep the network in step with engine time. The audio itself stays
    /// on the engine host and is not streamed.
    fn render_until(&mut self, t: f64) {
        let sr = self.performer.network().config().sample_rate;
        let target = (t * sr).floor().max(0.0) as u64;
        if target > self.rendered {
            let block = self.performer.network().config().block_size.max(1) as u64;
            let mut left = target - self.rendered;
            while left > 0 {
                let n = left.min(block * 16);
                self.performer.network_mut().render(n as usize);
                left -= n;
            }
            self.rendered = target;
        }
    }

    fn advance_ritual(&mut self, dt: f64) -> Vec<Frame> {
        let mut frames = Vec::new();
        if self.ritual_done {
            return frames;
        }
        self.ritual_t += dt;
        loop {
            if self.ritual.step_time(self.ritual_step) > self.ritual_t {
                break;
            }
            if self.episode.is_none() {
                if self.ritual.state.episode as usize >= self.ritual.config.episodes {
                    self.ritual_done = true;
                    break;
                }
                match self.ritual.run_episode() {
                    Ok((trajectory, summary)) => {
                        let episode = summary.episode;
                        let records = trajectory
                            .positions
                            .iter()
                            .enumerate()
                            .map(|(k, p)| {
                                self.ritual
                                    .record(episode, self.ritual_step + k as u64, p)
                                    .0
                            })
                            .collect::<VecDeque<_>>();
                        let final_distance = records.back().map_or(0.0, |r| r.distance);
                        self.episode = Some(Episode {
                            records,
                            summary: json!({
                                "episode": episode,
                                "best_reward": summary.best_reward,
                                "best_distance": summary.best_distance,
                                "final_distance": final_distance,
                                "sigma": self.ritual.agent.sigma(),
                            }),
                        });
                    }
                    Err(e) => {
                        log::error!("ritual episode failed, ritual halted: {e}");
                        self.ritual_done = true;
                        break;
                    }
                }
            }
            let episode = self.episode.as_mut().expect("episode present");
            if let Some(r) = episode.records.pop_front() {
                self.last_proximity = Some(r);
                self.ritual_step += 1;
            }
            if episode.records.is_empty() {
                let summary = self.episode.take().expect("episode present").summary;
                frames.push(Frame {
                    kind: "ritual_episode",
                    payload: summary.clone(),
                });
                self.last_episode = Some(summary);
                if self.ritual.stop_reached() {
                    log::info!("ritual reached its stop distance");
                    self.ritual_done = true;
                    break;
                }
            }
        }
        frames
    }

    fn oscnet_state(&self) -> Value {
        let net = self.performer.network();
        let mut v = to_value(&net.snapshot());
        v["active_count"] = json!(net.active_count());
        v["g_max"] = json!(net.config().g_max);
        v
    }

    fn model_summary(&self) -> Value {
        match self.performer.model() {
            Some(m) => json!({
                "rows": m.rows,
                "lambda": m.ridge_lambda,
                "feature_dim": m.feature_dim(),
                "trained_on": m.trained_on,
            }),
            None => Value::Null,
        }
    }

    fn ritual_state(&self) -> Value {
        json!({
            "target": self.ritual.env.target.digits,
            "episode": self.ritual.state.episode,
            "episodes": self.ritual.config.episodes,
            "best_distance": self.ritual.state.best_distance,
            "paused": self.paused,
            "finished": self.ritual_done,
            "sigma": self.ritual.agent.sigma(),
            "thresholds": self.ritual.config.proximity,
            "last_episode": self.last_episode,
            "proximity": self.last_proximity,
        })
    }

    /// Full state, sent to every client when it connects.
    pub fn snapshot(&self) -> Value {
        json!({
            "running": self.running,
            "seed": self.config.seed,
            "config": self.config,
            "features": self.last_features,
            "regime": { "estimates": self.last_regime },
            "oscnet_state": self.oscnet_state(),
            "model": self.model_summary(),
            "demos": self.store.len(),
            "recording": self.recording.as_ref().map(|r| json!({"id": r.id, "rows": r.rows.len()})),
            "ritual": self.ritual_state(),
        })
    }

    /// Apply one command. `Ok` carries the ack fields, `Err` the reason.
    pub fn handle(&mut self, command: Command) -> Result<Value, String> {
        match command {
            Command::Start => {
                self.running = true;
                Ok(json!({ "running": true }))
            }
            Command::Stop => {
                self.running = false;
                Ok(json!({ "running": false }))
            }
            Command::RecordDemo { label, id } => self.record_demo(label, id),
            Command::EndDemo => self.end_demo(),
            Command::Train { lambda } => {
                let lambda = lambda.unwrap_or(self.config.corpus.ridge_lambda);
                let model = train(&self.store, lambda).map_err(|e| e.to_string())?;
                let expected = self.analysis.features.first().map(|f| f.to_row().len());
                if let Some(dim) = expected.filter(|d| *d != model.feature_dim()) {
                    return Err(format!(
                        "demonstrations have {} features, the live input has {dim}",
                        model.feature_dim()
                    ));
                }
                self.performer.set_model(model);
                self.mapping_error_logged = false;
                let mut summary = self.model_summary();
                summary["demos"] = json!(self.store.len());
                Ok(summary)
            }
            Command::SetGain { i, j, value } => {
                self.performer
                    .network_mut()
                    .set_gain(i, j, value)
                    .map_err(|e| e.to_string())?;
                Ok(json!({ "i": i, "j": j, "value": value }))
            }
            Command::SetThresholds {
                t_hi,
                t_lo,
                closest_is_three,
            } => {
                let mut p = self.ritual.config.proximity;
                p.t_hi = t_hi.unwrap_or(p.t_hi);
                p.t_lo = t_lo.unwrap_or(p.t_lo);
                p.closest_is_three = closest_is_three.unwrap_or(p.closest_is_three);
                p.validate().map_err(|e| e.to_string())?;
                self.ritual.config.proximity = p;
                // steps already planned but not yet performed use the new
                // thresholds too
                if let Some(ep) = &mut self.episode {
                    let ritual = &self.ritual;
                    for r in ep.records.iter_mut() {
                        *r = ritual.record(r.episode, r.step, &r.position).0;
                    }
                }
                Ok(json!({ "thresholds": p }))
            }
            Command::AgentPause => {
                self.paused = true;
                Ok(json!({ "paused": true }))
            }
            Command::AgentResume => {
                self.paused = false;
                Ok(json!({ "paused": false }))
            }
            Command::SetSigma { value } => {
                if !(value.is_finite() && value > 0.0) {
                    return Err(format!("sigma must be positive, got {value}"));
                }
                self.ritual.agent.set_sigma(value);
                Ok(json!({ "sigma": value }))
            }
            Command::Takeover => Err("takeover is handled by the service".into()),
        }
    }

    fn record_demo(&mut self, label: Label, id: Option<String>) -> Result<Value, String> {
        if let Some(r) = &self.recording {
            return Err(format!("demonstration {} is still recording", r.id));
        }
        let label = NuanceTarget::new(label.tension, label.abruptness, label.relaxation);
        if let Some(v) = label.as_array().into_iter().find(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("label value {v} outside [0, 1]"));
        }
        let id = match id {
            Some(id) => id,
            None => {
                let mut k = self.store.len();
                while self.store.get(&format!("demo-{k:03}")).is_some() {
                    k += 1;
                }
                format!("demo-{k:03}")
            }
        };
        if self.store.get(&id).is_some() {
            return Err(format!("a demonstration named {id} already exists"));
        }
        // reject a bad id now rather than after the take
        let probe = Demonstration {
            id: id.clone(),
            feature_rows: vec![FeatureVector {
                time: 0.0,
                channels: Vec::new(),
                effort: 0.0,
                abruptness: 0.0,
                relaxation_rate: 0.0,
                complexity: 0,
            }],
            label,
            created_at: 0,
        };
        probe.validate().map_err(|e| e.to_string())?;
        self.recording = Some(Recording {
            id: id.clone(),
            label,
            rows: Vec::new(),
        });
        Ok(json!({ "id": id, "running": self.running }))
    }

    fn end_demo(&mut self) -> Result<Value, String> {
        let rec = self
            .recording
            .take()
            .ok_or_else(|| "no demonstration is recording".to_string())?;
        if rec.rows.is_empty() {
            return Err(format!(
                "demonstration {} captured no feature rows; start the engine while recording",
                rec.id
            ));
        }
        let rows = rec.rows.len();
        let demo = Demonstration {
            id: rec.id.clone(),
            feature_rows: rec.rows,
            label: rec.label,
            created_at: now_secs(),
        };
        self.store.add(demo).map_err(|e| e.to_string())?;
        Ok(json!({ "id": rec.id, "rows": rows, "demos": self.store.len() }))
    }
}
