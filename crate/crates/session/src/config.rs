use std::path::{Path, PathBuf};

use corpusnil_core::features::FeatureParams;
use corpusnil_core::nuance::MappingConfig;
use corpusnil_core::oscnet::OscConfig;
use corpusnil_core::regime::RegimeParams;
use corpusnil_core::ritual::{CemConfig, DirectiveConfig, ProximityConfig, RitualTarget, DIMS};
use corpusnil_core::signals::{ContractionEvent, ContractionProfile, SignalKind};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SessionError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Corpus,
    Ritual,
}

/// One JSON document describing a whole session.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Master seed; every seeded component derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub ritual: RitualConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// One entry per analysed channel.
    pub sources: Vec<SourceConfig>,
    pub features: FeatureParams,
    pub regime: RegimeParams,
    /// Seconds from the start used to capture calibration maxima; the whole
    /// input when absent.
    pub calibration_seconds: Option<f64>,
    /// Write feature and regime logs only, no audio.
    pub calibration_only: bool,
    pub nuance_model: Option<PathBuf>,
    /// Demonstration store used by `train-nuance` and the live service.
    pub demos_dir: Option<PathBuf>,
    pub ridge_lambda: f64,
    pub mapping: MappingConfig,
    pub oscnet: OscConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let profile = ContractionProfile {
            events: (0..5)
                .map(|i| ContractionEvent {
                    onset: 0.5 + 2.0 * i as f64,
                    peak_level: 0.8 - 0.1 * i as f64,
                    rise_time: 0.1,
                    decay_time: 0.3,
                })
                .collect(),
            noise_floor: 0.01,
        };
        CorpusConfig {
            sources: vec![
                SourceConfig::Synth {
                    channel: 0,
                    kind: SignalKind::Emg,
                    duration: 10.0,
                    sample_rate: None,
                    profile: profile.clone(),
                    zeta: default_zeta(),
                    natural_frequency: default_natural_frequency(),
                },
                SourceConfig::Synth {
                    channel: 1,
                    kind: SignalKind::Mmg,
                    duration: 10.0,
                    sample_rate: None,
                    profile,
                    zeta: default_zeta(),
                    natural_frequency: default_natural_frequency(),
                },
            ],
            features: FeatureParams::default(),
            regime: RegimeParams::default(),
            calibration_seconds: None,
            calibration_only: false,
            nuance_model: None,
            demos_dir: None,
            ridge_lambda: 1e-3,
            mapping: MappingConfig::default(),
            oscnet: OscConfig::default(),
        }
    }
}

fn default_zeta() -> f64 {
    0.3
}

fn default_natural_frequency() -> f64 {
    8.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Generated signal with known ground truth.
    Synth {
        channel: u8,
        kind: SignalKind,
        /// Seconds.
        duration: f64,
        /// Defaults to 1000 Hz for EMG and 4000 Hz for MMG.
        #[serde(default)]
        sample_rate: Option<f64>,
        profile: ContractionProfile,
        /// MMG damping ratio.
        #[serde(default = "default_zeta")]
        zeta: f64,
        /// MMG natural frequency, Hz.
        #[serde(default = "default_natural_frequency")]
        natural_frequency: f64,
    },
    /// One channel of a WAV recording.
    Wav {
        channel: u8,
        kind: SignalKind,
        path: PathBuf,
        /// Channel index inside the file.
        #[serde(default)]
        file_channel: usize,
        /// Fixed gain instead of peak normalisation.
        #[serde(default)]
        gain: Option<f64>,
    },
}

impl SourceConfig {
    pub fn channel(&self) -> u8 {
        match self {
            SourceConfig::Synth { channel, .. } | SourceConfig::Wav { channel, .. } => *channel,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Cem,
    RandomSearch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RitualConfig {
    /// Ten digits; a seeded random target when absent.
    pub target: Option<[u8; DIMS]>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Performed agent steps per second of event time.
    pub step_rate: f64,
    pub max_step: f64,
    pub start: [f64; DIMS],
    pub agent: AgentKind,
    pub cem: CemConfig,
    pub proximity: ProximityConfig,
    pub directive: DirectiveConfig,
    /// Pattern bank JSON; the built-in bank when absent.
    pub pattern_bank: Option<PathBuf>,
    /// Stop once the best distance reaches this value.
    pub stop_distance: Option<f64>,
    /// Mirror light events as JSON datagrams to this `host:port`.
    pub light_udp: Option<String>,
}

impl Default for RitualConfig {
    fn default() -> Self {
        RitualConfig {
            target: None,
            episodes: 200,
            steps_per_episode: 50,
            step_rate: 2.0,
            max_step: 0.5,
            start: [4.5; DIMS],
            agent: AgentKind::Cem,
            cem: CemConfig::default(),
            proximity: ProximityConfig::default(),
            directive: DirectiveConfig::default(),
            pattern_bank: None,
            stop_distance: None,
            light_udp: None,
        }
    }
}

impl SessionConfig {
    /// Read, resolve relative paths and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
        let mut config: SessionConfig =
            serde_json::from_str(&text).map_err(|e| SessionError::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: SessionConfig =
            serde_json::from_str(text).map_err(|e| SessionError::json("<config>", e))?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        for s in &mut self.corpus.sources {
            if let SourceConfig::Wav { path, .. } = s {
                join(path);
            }
        }
        for p in [
            &mut self.corpus.nuance_model,
            &mut self.corpus.demos_dir,
            &mut self.ritual.pattern_bank,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SessionError::Config(msg));
        let exists = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(SessionError::MissingPath(p.to_owned()))
            }
        };
        match self.mode {
            Mode::Corpus => {
                let c = &self.corpus;
                if c.sources.is_empty() {
                    return bad("corpus mode needs at least one source".into());
                }
                let mut ids: Vec<u8> = c.sources.iter().map(SourceConfig::channel).collect();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return bad("source channel ids must be unique".into());
                }
                for s in &c.sources {
                    match s {
                        SourceConfig::Wav { path, .. } => exists(path)?,
                        SourceConfig::Synth { profile, duration, .. } => {
                            profile.validate()?;
                            if !(*duration > 0.0) {
                                return bad(format!("synth duration {duration} must be positive"));
                            }
                        }
                    }
                }
                if let Some(p) = &c.nuance_model {
                    exists(p)?;
                }
                if let Some(s) = c.calibration_seconds {
                    if !(s > 0.0) {
                        return bad(format!("calibration_seconds {s} must be positive"));
                    }
                }
                if !(c.ridge_lambda >= 0.0) {
                    return bad("ridge_lambda must be non-negative".into());
                }
                c.oscnet.validate()?;
            }
            Mode::Ritual => {
                let r = &self.ritual;
                if let Some(t) = r.target {
                    RitualTarget::new(t)?;
                }
                if r.episodes == 0 || r.steps_per_episode == 0 {
                    return bad("episodes and steps_per_episode must be positive".into());
                }
                if !(r.step_rate > 0.0 && r.max_step > 0.0) {
                    return bad("step_rate and max_step must be positive".into());
                }
                if r.cem.population == 0 {
                    return bad("agent population must be positive".into());
                }
                r.proximity.validate()?;
                r.directive.validate()?;
                if let Some(p) = &r.pattern_bank {
                    exists(p)?;
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    /// JSON-Schema of the config document.
    pub fn schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(SessionConfig)).expect("schema serialises")
    }
}
