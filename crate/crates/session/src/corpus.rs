//! The instrument pipeline, offline: signals → features and regimes →
//! calibration → nuance → control actions → oscillator network audio.

use std::path::{Path, PathBuf};

use corpusnil_core::features::{
    assemble, Calibration, ChannelRegime, ChannelSeries, FeatureParams, FeatureVector, Series,
};
use corpusnil_core::nuance::{ActionMapper, NuanceModel, NuanceTarget};
use corpusnil_core::oscnet::{ControlAction, OscConfig, OscNetwork};
use corpusnil_core::regime::{estimate_stream_with, RegimeEstimate};
use corpusnil_core::seed;
use corpusnil_core::signals::{
    bandpass, load_recording_with_gain, synth_emg, synth_mmg, write_wav_f32, SignalFrame,
    SignalKind,
};
use serde::Serialize;

use crate::artifacts::OutputDir;
use crate::config::{CorpusConfig, SessionConfig, SourceConfig};
use crate::error::{Result, SessionError};

fn relabel(frames: Vec<SignalFrame>, channel: u8) -> Result<Vec<SignalFrame>> {
    frames
        .into_iter()
        .map(|f| {
            SignalFrame::new(channel, f.kind, f.sample_rate, f.start_time, f.samples().to_vec())
                .map_err(SessionError::from)
        })
        .collect()
}

/// Produce every configured source as a frame stream, in config order.
pub fn load_sources(config: &CorpusConfig, master_seed: u64) -> Result<Vec<Vec<SignalFrame>>> {
    config
        .sources
        .iter()
        .map(|source| match source {
            SourceConfig::Synth {
                channel,
                kind,
                duration,
                sample_rate,
                profile,
                zeta,
                natural_frequency,
            } => {
                let fs = sample_rate.unwrap_or_else(|| kind.default_sample_rate());
                let s = seed::derive_indexed(master_seed, "synth", u64::from(*channel));
                let frames = match kind {
                    SignalKind::Emg => synth_emg(profile, *duration, fs, s)?,
                    SignalKind::Mmg => synth_mmg(
                        *zeta,
                        2.0 * std::f64::consts::PI * natural_frequency,
                        profile,
                        *duration,
                        fs,
                        s,
                    )?,
                };
                relabel(frames, *channel)
            }
            SourceConfig::Wav {
                channel,
                kind,
                path,
                file_channel,
                gain,
            } => {
                let mut channels = load_recording_with_gain(path, *kind, *gain)?;
                if *file_channel >= channels.len() {
                    return Err(SessionError::Config(format!(
                        "{} has {} channels, file_channel {} requested",
                        path.display(),
                        channels.len(),
                        file_channel
                    )));
                }
                relabel(channels.swap_remove(*file_channel), *channel)
            }
        })
        .collect()
}

/// Features, regimes and calibration of a set of channels.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub features: Vec<FeatureVector>,
    /// Regime estimates per MMG channel.
    pub regimes: Vec<(u8, Vec<RegimeEstimate>)>,
    pub calibration: Calibration,
    /// Length of the shortest channel, seconds.
    pub duration: f64,
}

#[derive(Serialize)]
struct RegimeRecord<'a> {
    channel: u8,
    #[serde(flatten)]
    estimate: &'a RegimeEstimate,
}

fn truncate(s: &Series<f64>, until: Option<f64>) -> Series<f64> {
    let values = match until {
        Some(t) => s
            .values
            .iter()
            .enumerate()
            .take_while(|(k, _)| s.time(*k) <= t + 1e-9)
            .map(|(_, v)| *v)
            .collect(),
        None => s.values.clone(),
    };
    Series {
        t0: s.t0,
        hop: s.hop,
        values,
    }
}

pub fn analyze(channels: &[Vec<SignalFrame>], config: &CorpusConfig) -> Result<Analysis> {
    let params: &FeatureParams = &config.features;
    let mut series = Vec::with_capacity(channels.len());
    let mut regimes = Vec::new();
    let mut duration = f64::INFINITY;
    for frames in channels {
        let first = frames
            .first()
            .ok_or_else(|| SessionError::Config("a source produced no samples".into()))?;
        let band = bandpass(frames, params.band_lo, params.band_hi)?;
        series.push(ChannelSeries::compute(&band, params)?);
        duration = duration.min(frames.iter().map(|f| f.end_time()).fold(0.0, f64::max));
        if first.kind == SignalKind::Mmg {
            // the estimator band-limits internally; a band-pass here would
            // add its own poles to the fitted dynamics
            regimes.push((first.channel_id, estimate_stream_with(frames, config.regime)?));
        }
    }
    let reference = &series[0].envelope;
    for s in &series[1..] {
        if (s.envelope.hop - reference.hop).abs() > 1e-12
            || (s.envelope.t0 - reference.t0).abs() > 1e-12
        {
            return Err(SessionError::SampleRates(format!(
                "channel {} has a feature hop of {} s, channel {} has {} s; \
                 hop times sample rate must be an integer for every channel",
                s.channel_id, s.envelope.hop, series[0].channel_id, reference.hop
            )));
        }
    }
    let calibration = Calibration::capture(
        &series
            .iter()
            .map(|s| {
                (
                    truncate(&s.envelope, config.calibration_seconds),
                    truncate(&s.change_rate, config.calibration_seconds),
                )
            })
            .collect::<Vec<_>>(),
    );
    let channel_regimes: Vec<ChannelRegime<'_>> = regimes
        .iter()
        .map(|(channel_id, estimates)| ChannelRegime {
            channel_id: *channel_id,
            estimates,
        })
        .collect();
    let features = assemble(&series, &channel_regimes, &calibration, params)?;
    Ok(Analysis {
        features,
        regimes,
        calibration,
        duration,
    })
}

/// Load a serialised nuance model.
pub fn load_model(path: &Path) -> Result<NuanceModel> {
    let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
    Ok(NuanceModel::from_json(&text)?)
}

#[derive(Serialize)]
struct ActionRecord<'a> {
    time: f64,
    nuance: NuanceTarget,
    /// No channel active: everything is muted regardless of the model.
    muted: bool,
    action: &'a ControlAction,
}

/// Turns feature vectors into control actions and renders the network.
pub struct Performer {
    model: Option<NuanceModel>,
    mapper: ActionMapper,
    net: OscNetwork,
    master_seed: u64,
    step: u64,
}

impl Performer {
    /// Without a model the network can still be rendered and edited, but
    /// [`Performer::perform`] fails until one is installed.
    pub fn new(model: Option<NuanceModel>, config: &CorpusConfig, master_seed: u64) -> Result<Self> {
        let osc = OscConfig {
            seed: seed::derive(master_seed, "oscnet"),
            ..config.oscnet.clone()
        };
        let mapper = ActionMapper::new(config.mapping.clone(), &osc);
        Ok(Performer {
            model,
            mapper,
            net: OscNetwork::new(osc)?,
            master_seed,
            step: 0,
        })
    }

    pub fn network(&self) -> &OscNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut OscNetwork {
        &mut self.net
    }

    pub fn model(&self) -> Option<&NuanceModel> {
        self.model.as_ref()
    }

    pub fn set_model(&mut self, model: NuanceModel) {
        self.model = Some(model);
    }

    /// Predict, map and apply one feature vector; returns the nuance, the
    /// action and whether the silence rule muted everything.
    pub fn perform(&mut self, fv: &FeatureVector) -> Result<(NuanceTarget, ControlAction, bool)> {
        let model = self.model.as_ref().ok_or(SessionError::MissingModel)?;
        let nuance = model.predict(fv)?;
        let muted = fv.complexity == 0;
        let action = if muted {
            ControlAction::mute_all()
        } else {
            let s = seed::derive_indexed(self.master_seed, "mapping", self.step);
            self.mapper.map(nuance, s)
        };
        self.step += 1;
        self.net.apply(&action)?;
        Ok((nuance, action, muted))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusReport {
    pub output_dir: PathBuf,
    pub feature_rows: usize,
    pub regime_rows: usize,
    /// Audio frames written; `None` in calibration-only mode.
    pub audio_frames: Option<usize>,
}

pub fn run_corpus(config: &SessionConfig) -> Result<CorpusReport> {
    let c = &config.corpus;
    let model = match (&c.nuance_model, c.calibration_only) {
        (_, true) => None,
        (Some(p), false) => Some(load_model(p)?),
        (None, false) => return Err(SessionError::MissingModel),
    };
    let out = OutputDir::create(&config.output_dir)?;
    out.write_json("config.json", config)?;

    let channels = load_sources(c, config.seed)?;
    let analysis = analyze(&channels, c)?;

    let mut log = out.jsonl("logs/features.jsonl")?;
    for fv in &analysis.features {
        log.write(fv)?;
    }
    let feature_rows = log.finish()?;
    let mut log = out.jsonl("logs/regime.jsonl")?;
    for (channel, estimates) in &analysis.regimes {
        for estimate in estimates {
            log.write(&RegimeRecord {
                channel: *channel,
                estimate,
            })?;
        }
    }
    let regime_rows = log.finish()?;
    out.write_json("models/calibration.json", &analysis.calibration)?;

    let Some(model) = model else {
        let root = out.finish(config, "completed")?;
        return Ok(CorpusReport {
            output_dir: root,
            feature_rows,
            regime_rows,
            audio_frames: None,
        });
    };
    if let Some(fv) = analysis.features.first() {
        let dim = fv.to_row().len();
        if dim != model.feature_dim() {
            return Err(corpusnil_core::Error::DimensionMismatch {
                expected: model.feature_dim(),
                actual: dim,
            }
            .into());
        }
    }
    out.write_json("models/nuance.json", &model)?;

    let mut performer = Performer::new(Some(model), c, config.seed)?;
    let sr = performer.network().config().sample_rate;
    let channels_out = performer.network().config().channels;
    let total = (analysis.duration * sr).round() as usize;
    let mut audio: Vec<f32> = Vec::with_capacity(total * channels_out);
    let mut rendered = 0usize;
    let mut render_until = |net: &mut OscNetwork, audio: &mut Vec<f32>, t: f64| {
        let target = ((t * sr).round() as usize).min(total);
        if target > rendered {
            audio.extend(net.render(target - rendered).samples);
            rendered = target;
        }
    };
    let mut log = out.jsonl("logs/actions.jsonl")?;
    for fv in &analysis.features {
        render_until(performer.network_mut(), &mut audio, fv.time);
        let (nuance, action, muted) = performer.perform(fv)?;
        log.write(&ActionRecord {
            time: fv.time,
            nuance,
            muted,
            action: &action,
        })?;
    }
    log.finish()?;
    render_until(performer.network_mut(), &mut audio, analysis.duration);

    let wav = out.path("audio/out.wav");
    write_wav_f32(&wav, &audio, channels_out as u16, sr.round() as u32)?;
    let root = out.finish(config, "completed")?;
    Ok(CorpusReport {
        output_dir: root,
        feature_rows,
        regime_rows,
        audio_frames: Some(rendered),
    })
}
