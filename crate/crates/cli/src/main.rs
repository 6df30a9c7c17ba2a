use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use corpusnil_bridge::{Bridge, BridgeOptions};
use corpusnil_core::nuance::{train, DemoStore, Demonstration, NuanceTarget};
use corpusnil_core::signals::{concat_samples, load_recording, write_wav_f32, SignalKind};
use corpusnil_session::{
    analyze, load_sources, run_corpus, run_ritual, Mode, SessionConfig, SessionError,
    SourceConfig,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "corpusnil", version, about = "Body-signal instrument and agent ritual")]
struct Cli {
    /// Session config (JSON); see schema/session.schema.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Emg,
    Mmg,
}

impl From<Kind> for SignalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Emg => SignalKind::Emg,
            Kind::Mmg => SignalKind::Mmg,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write every synthetic source of the config as a WAV file.
    Synth {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Extract features and regimes from a WAV recording.
    Analyze {
        path: PathBuf,
        /// Signal kind of each file channel, in order; one value applies to all.
        #[arg(long, value_delimiter = ',', default_value = "emg")]
        kind: Vec<Kind>,
        /// Write the calibration-only artifact layout here instead of a summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the nuance model from stored demonstrations.
    TrainNuance {
        /// Demonstration directory; defaults to corpus.demos_dir.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// First store the config's sources as a demonstration with this id.
        #[arg(long, requires = "label")]
        record: Option<String>,
        /// Label of the recorded demonstration: tension,abruptness,relaxation.
        #[arg(long, value_parser = parse_label, requires = "record")]
        label: Option<[f64; 3]>,
        /// Ridge penalty; defaults to corpus.ridge_lambda.
        #[arg(long)]
        lambda: Option<f64>,
        /// Model path; defaults to <demos>/model.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the instrument pipeline offline.
    RunCorpus,
    /// Run the learning ritual offline.
    RunRitual,
    /// Serve the live engine over websockets.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Engine seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Start the engine without waiting for a start command.
        #[arg(long)]
        autostart: bool,
    },
}

fn parse_label(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected 3 values, got {}", v.len()))
}

/// A failure reported as one JSON line.
struct Failure {
    message: String,
    path: Option<PathBuf>,
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure {
            path: e.path().map(Path::to_owned),
            message: e.to_string(),
        }
    }
}

impl From<corpusnil_core::Error> for Failure {
    fn from(e: corpusnil_core::Error) -> Self {
        SessionError::from(e).into()
    }
}

fn fail(message: impl Into<String>) -> Failure {
    Failure {
        message: message.into(),
        path: None,
    }
}

fn load_config(cli: &Cli, mode: Option<Mode>) -> Result<SessionConfig, Failure> {
    let config = match &cli.config {
        Some(p) => SessionConfig::load(p)?,
        None => {
            let mode = mode.ok_or_else(|| fail("this command needs --config"))?;
            SessionConfig {
                mode,
                seed: 0,
                output_dir: "corpusnil-out".into(),
                corpus: Default::default(),
                ritual: Default::default(),
            }
        }
    };
    Ok(config.with_seed(cli.seed))
}

fn print(value: Value) {
    println!("{value}");
}

fn synth(cli: &Cli, out: &Path) -> Result<(), Failure> {
    let config = load_config(cli, Some(Mode::Corpus))?;
    let channels = load_sources(&config.corpus, config.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Failure {
        message: e.to_string(),
        path: Some(out.to_owned()),
    })?;
    let mut files = Vec::new();
    for (source, frames) in config.corpus.sources.iter().zip(&channels) {
        if !matches!(source, SourceConfig::Synth { .. }) {
            continue;
        }
        let Some(first) = frames.first() else { continue };
        let kind = match first.kind {
            SignalKind::Emg => "emg",
            SignalKind::Mmg => "mmg",
        };
        let path = out.join(format!("ch{}-{kind}.wav", first.channel_id));
        let samples: Vec<f32> = concat_samples(frames).iter().map(|&v| v as f32).collect();
        write_wav_f32(&path, &samples, 1, first.sample_rate.round() as u32)?;
        files.push(json!({"path": path, "channel": first.channel_id, "kind": kind,
                          "sample_rate": first.sample_rate, "samples": samples.len()}));
    }
    print(json!({ "files": files }));
    Ok(())
}

fn analyze_file(cli: &Cli, path: &Path, kinds: &[Kind], out: Option<&Path>) -> Result<(), Failure> {
    let mut config = load_config(cli, Some(Mode::Corpus))?;
    // probe the channel count; a missing file fails here, naming the path
    let probe = load_recording(path, SignalKind::Emg)?;
    if kinds.len() != 1 && kinds.len() != probe.len() {
        return Err(fail(format!(
            "{} kinds given for a file with {} channels",
            kinds.len(),
            probe.len()
        )));
    }
    config.mode = Mode::Corpus;
    config.corpus.calibration_only = true;
    config.corpus.nuance_model = None;
    config.corpus.sources = (0..probe.len())
        .map(|c| SourceConfig::Wav {
            channel: c as u8,
            kind: kinds[c.min(kinds.len() - 1)].into(),
            path: path.to_owned(),
            file_channel: c,
            gain: None,
        })
        .collect();
    if let Some(out) = out {
        config.output_dir = out.to_owned();
        let report = run_corpus(&config)?;
        print(json!({
            "output_dir": report.output_dir,
            "feature_rows": report.feature_rows,
            "regime_rows": report.regime_rows,
        }));
        return Ok(());
    }
    let channels = load_sources(&config.corpus, config.seed)?;
    let analysis = analyze(&channels, &config.corpus)?;
    let regimes: Vec<Value> = analysis
        .regimes
        .iter()
        .map(|(channel, est)| {
            let valid: Vec<_> = est.iter().filter(|e| e.valid).collect();
            let median = |f: &dyn Fn(&corpusnil_core::regime::RegimeEstimate) -> f64| {
                let mut v: Vec<f64> = valid.iter().map(|e| f(e)).collect();
                v.sort_by(f64::total_cmp);
                v.get(v.len() / 2).copied()
            };
            json!({
                "channel": channel,
                "windows": est.len(),
                "valid": valid.len(),
                "median_zeta": median(&|e| e.zeta),
                "median_frequency_hz": median(&|e| e.omega / (2.0 * std::f64::consts::PI)),
            })
        })
        .collect();
    print(json!({
        "path": path,
        "channels": channels.len(),
        "duration": analysis.duration,
        "feature_rows": analysis.features.len(),
        "max_complexity": analysis.features.iter().map(|f| f.complexity).max(),
        "regimes": regimes,
    }));
    Ok(())
}

fn train_nuance(
    cli: &Cli,
    demos: Option<&Path>,
    record: Option<&str>,
    label: Option<[f64; 3]>,
    lambda: Option<f64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = match (&cli.config, record) {
        (Some(_), _) | (None, Some(_)) => Some(load_config(cli, None)?),
        (None, None) => None,
    };
    let dir = demos
        .map(Path::to_owned)
        .or_else(|| config.as_ref().and_then(|c| c.corpus.demos_dir.clone()))
        .ok_or_else(|| fail("no demonstration directory: pass --demos or set corpus.demos_dir"))?;
    let mut store = DemoStore::open(&dir)?;
    let mut recorded = Value::Null;
    if let (Some(id), Some(label), Some(config)) = (record, label, &config) {
        let channels = load_sources(&config.corpus, config.seed)?;
        let analysis = analyze(&channels, &config.corpus)?;
        let rows = analysis.features.len();
        let demo = Demonstration {
            id: id.to_owned(),
            feature_rows: analysis.features,
            label: NuanceTarget::new(label[0], label[1], label[2]),
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let added = store.add(demo)?;
        recorded = json!({ "id": id, "rows": rows, "added": added });
    }
    let lambda = lambda
        .or_else(|| config.as_ref().map(|c| c.corpus.ridge_lambda))
        .unwrap_or(1e-3);
    let model = train(&store, lambda)?;
    let path = out.map(Path::to_owned).unwrap_or_else(|| dir.join("model.json"));
    let text = model.to_json()?;
    std::fs::write(&path, text + "\n").map_err(|e| Failure {
        message: e.to_string(),
        path: Some(path.clone()),
    })?;
    print(json!({
        "model": path,
        "rows": model.rows,
        "lambda": model.ridge_lambda,
        "feature_dim": model.feature_dim(),
        "trained_on": model.trained_on,
        "recorded": recorded,
    }));
    Ok(())
}

fn serve(cli: &Cli, bind: &str, port: u16, speed: f64, autostart: bool) -> Result<(), Failure> {
    let config = load_config(cli, Some(Mode::Corpus))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| fail(format!("cannot start the runtime: {e}")))?;
    runtime.block_on(async {
        let options = BridgeOptions {
            speed,
            autostart,
            tick: Duration::from_millis(25),
        };
        let addr = format!("{bind}:{port}");
        let bridge = Bridge::bind(config, &addr, options).await.map_err(|e| match e {
            corpusnil_bridge::BridgeError::Session(s) => Failure::from(s),
            other => fail(other.to_string()),
        })?;
        print(json!({ "listening": bridge.local_addr().to_string() }));
        if let Err(e) = tokio::signal::ctrl_c().await {
            log::error!("cannot wait for ctrl-c: {e}");
        }
        bridge.shutdown().await;
        Ok(())
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Cmd::Synth { out } => synth(cli, out),
        Cmd::Analyze { path, kind, out } => analyze_file(cli, path, kind, out.as_deref()),
        Cmd::TrainNuance {
            demos,
            record,
            label,
            lambda,
            out,
        } => train_nuance(
            cli,
            demos.as_deref(),
            record.as_deref(),
            *label,
            *lambda,
            out.as_deref(),
        ),
        Cmd::RunCorpus => {
            let config = load_config(cli, None)?;
            let r = run_corpus(&config)?;
            print(json!({
                "status": "completed",
                "output_dir": r.output_dir,
                "feature_rows": r.feature_rows,
                "regime_rows": r.regime_rows,
                "audio_frames": r.audio_frames,
            }));
            Ok(())
        }
        Cmd::RunRitual => {
            let config = load_config(cli, None)?;
            let r = run_ritual(&config)?;
            let mut v = serde_json::to_value(&r).unwrap_or(Value::Null);
            v["output_dir"] = json!(r.output_dir);
            print(v);
            Ok(())
        }
        Cmd::Serve {
            bind,
            port,
            speed,
            autostart,
        } => serve(cli, bind, *port, *speed, *autostart),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.message, "path": f.path }));
            ExitCode::FAILURE
        }
    }
}
