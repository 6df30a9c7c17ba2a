//! One test per acceptance criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line (uncaptured) before asserting, so
//! `cargo test --test acceptance -- --test-threads=1` reads as a report.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use corpusnil_core::nuance::fit;
use corpusnil_core::oscnet::*;
use corpusnil_core::regime::{estimate_stream_with, RegimeEstimate, RegimeParams};
use corpusnil_core::ritual::*;
use corpusnil_core::seed;
use corpusnil_core::signals::*;
use rand::Rng;
use serde_json::{json, Value};

fn report(n: u32, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {n}: {detail}");
}

// ---- 1: band contract

fn gain_db(freq: f64, fs: f64) -> f64 {
    let x: Vec<f64> = (0..(8.0 * fs) as usize)
        .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / fs).cos())
        .collect();
    let mut y = x.clone();
    Bandpass::new(BandpassSpec::default(), fs)
        .unwrap()
        .process_in_place(&mut y);
    let rms = |v: &[f64]| {
        let tail = &v[v.len() / 2..];
        (tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64).sqrt()
    };
    20.0 * (rms(&y) / rms(&x)).log10()
}

#[test]
fn criterion_1_band_contract() {
    let start = Instant::now();
    let mut worst = [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64];
    for fs in [1000.0, 2000.0, 4000.0] {
        worst[0] = worst[0].max(gain_db(0.0, fs));
        worst[1] = worst[1].max(gain_db(200.0, fs));
        let g = gain_db(10.0, fs);
        if g.abs() > worst[2].abs() {
            worst[2] = g;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst[0] <= -40.0 && worst[1] <= -40.0 && worst[2].abs() <= 1.0 && secs < 10.0;
    report(
        1,
        pass,
        format!(
            "DC {:.1} dB, 200 Hz {:.1} dB, 10 Hz {:+.3} dB, {secs:.2} s",
            worst[0], worst[1], worst[2]
        ),
    );
}

// ---- 2: regime oracle

#[test]
fn criterion_2_regime_oracle() {
    const RATE: f64 = 4000.0;
    let start = Instant::now();
    let (mut valid, mut hits) = (0usize, 0usize);
    let mut worst_cell = (f64::INFINITY, 0.0, 0.0);
    for i in 0..5 {
        let zeta = 0.05 + (0.9 - 0.05) * i as f64 / 4.0;
        for j in 0..5 {
            let f0 = 2.0 + (15.0 - 2.0) * j as f64 / 4.0;
            let omega = 2.0 * PI * f0;
            let profile = ContractionProfile::periodic(0.0, 2.0, 6, 1.0, 0.01, 0.1).unwrap();
            let frames = synth_mmg(zeta, omega, &profile, 12.0, RATE, 1).unwrap();
            let est: Vec<RegimeEstimate> = estimate_stream_with(&frames, RegimeParams::default()).unwrap();
            let ok: Vec<_> = est.iter().filter(|e| e.valid).collect();
            let h = ok
                .iter()
                .filter(|e| (e.zeta - zeta).abs() <= 0.02 && ((e.omega - omega) / omega).abs() <= 0.05)
                .count();
            valid += ok.len();
            hits += h;
            let rate = h as f64 / ok.len().max(1) as f64;
            if rate < worst_cell.0 {
                worst_cell = (rate, zeta, f0);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = hits as f64 / valid.max(1) as f64;
    report(
        2,
        valid > 0 && rate >= 0.9 && secs < 60.0,
        format!(
            "{hits}/{valid} valid windows within (±0.02, ±5%) = {:.1}%, worst cell ζ={:.3} f0={:.2} Hz at {:.1}%, {secs:.1} s",
            100.0 * rate,
            worst_cell.1,
            worst_cell.2,
            100.0 * worst_cell.0
        ),
    );
}

// ---- 3: regression exactness

#[test]
fn criterion_3_regression_exactness() {
    let mut rng = seed::rng(33);
    let dim = 6;
    let w: Vec<[f64; 3]> = (0..dim)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.08..0.08)))
        .collect();
    let b = [0.4, 0.5, 0.6];
    let rows: Vec<Vec<f64>> = (0..120)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<[f64; 3]> = rows
        .iter()
        .map(|r| std::array::from_fn(|o| b[o] + (0..dim).map(|k| w[k][o] * r[k]).sum::<f64>()))
        .collect();
    let model = fit(&rows, &labels, 0.0, vec!["exact".into()]).unwrap();
    let (weights, intercept) = model.coefficients();
    let mut err = 0.0f64;
    for o in 0..3 {
        err = err.max((intercept[o] - b[o]).abs());
        for k in 0..dim {
            err = err.max((weights[o][k] - w[k][o]).abs());
        }
    }
    let text = model.to_json().unwrap();
    let back = corpusnil_core::nuance::NuanceModel::from_json(&text).unwrap();
    let same_predictions = rows.iter().all(|r| {
        let a = model.predict_row(r).unwrap().raw;
        let c = back.predict_row(r).unwrap().raw;
        a.iter().zip(&c).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let bit_exact = back == model && back.to_json().unwrap() == text && same_predictions;
    report(
        3,
        err <= 1e-6 && bit_exact,
        format!("max weight error {err:.2e}, round trip bit-exact: {bit_exact}"),
    );
}

// ---- 4: oscillator safety and determinism

fn random_action(rng: &mut seed::Rng) -> ControlAction {
    let mut a = ControlAction::default();
    for _ in 0..rng.random_range(0..6) {
        a.activate.insert(rng.random_range(0..N_OSC));
    }
    for _ in 0..rng.random_range(0..3) {
        a.mute.insert(rng.random_range(0..N_OSC));
    }
    for _ in 0..rng.random_range(0..4) {
        a.volume_targets.insert(rng.random_range(0..N_OSC), rng.random_range(0.0..1.0));
    }
    for _ in 0..rng.random_range(0..2) {
        a.glissandi.insert(
            rng.random_range(0..N_OSC),
            Glissando {
                target: rng.random_range(30.0..2000.0),
                rate: rng.random_range(0.0..500.0),
            },
        );
    }
    a.feedback_delta = match rng.random_range(0..3) {
        0 => Some(FeedbackDelta::Global(rng.random_range(0.0..3.0))),
        1 => Some(FeedbackDelta::Sparse(
            (0..4)
                .map(|_| GainDelta {
                    i: rng.random_range(0..N_OSC),
                    j: rng.random_range(0..N_OSC),
                    delta: rng.random_range(-2.0..2.0),
                })
                .collect(),
        )),
        _ => None,
    };
    a
}

/// 60 s at the default rate, a random action every 50 ms. Returns the audio
/// and whether the oscillator count stayed at 20 throughout.
fn stress(seed_value: u64) -> (Vec<f32>, bool) {
    let config = OscConfig {
        seed: seed_value,
        ..OscConfig::default()
    };
    let mut net = OscNetwork::new(config).unwrap();
    let mut rng = seed::rng(seed::derive(seed_value, "stress"));
    let block = (0.05 * net.config().sample_rate) as usize;
    let mut audio = Vec::new();
    let mut twenty = net.oscillators().len() == N_OSC;
    for _ in 0..1200 {
        net.apply(&random_action(&mut rng)).unwrap();
        audio.extend(net.render(block).samples);
        twenty &= net.oscillators().len() == N_OSC && net.snapshot().oscillators.len() == N_OSC;
    }
    (audio, twenty)
}

#[test]
fn criterion_4_oscillator_safety() {
    let (a, twenty_a) = stress(11);
    let (b, twenty_b) = stress(11);
    let out_of_range = a.iter().filter(|s| !(-1.0..=1.0).contains(*s)).count();
    let non_finite = a.iter().filter(|s| !s.is_finite()).count();
    let identical = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    let audible = a.iter().any(|&s| s != 0.0);
    report(
        4,
        out_of_range == 0 && non_finite == 0 && identical && twenty_a && twenty_b && audible,
        format!(
            "{} samples, {out_of_range} outside [-1,1], {non_finite} non-finite, identical re-render: {identical}, always 20 oscillators: {}",
            a.len(),
            twenty_a && twenty_b
        ),
    );
}

// ---- 5: ritual learning sanity

/// Mean distance at the end of the performed trajectory over the last ten
/// of 200 episodes.
fn mean_final_distance(agent: &mut dyn EpisodicAgent, env: &RitualEnv) -> f64 {
    let mut state = AgentState::new(env.start, &env.target);
    let mut tail = Vec::new();
    for episode in 0..200 {
        let (traj, _) = run_episode(agent, env, &mut state, 50).unwrap();
        if episode >= 190 {
            tail.push(env.distance(traj.positions.last().unwrap()));
        }
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[test]
fn criterion_5_ritual_learning() {
    let start = Instant::now();
    let cfg = CemConfig::default();
    let mut wins = 0;
    let (mut sum_cem, mut sum_random) = (0.0, 0.0);
    for s in 0..20u64 {
        let seed_value = seed::derive_indexed(2024, "acceptance-ritual", s);
        let env = RitualEnv::new(RitualTarget::random(seed_value), 0.5, [4.5; DIMS]).unwrap();
        let mut cem = CemAgent::new(cfg, seed_value);
        let mut random = RandomSearch::new(cfg.population, cfg.sigma, seed_value);
        let a = mean_final_distance(&mut cem, &env);
        let b = mean_final_distance(&mut random, &env);
        sum_cem += a;
        sum_random += b;
        wins += usize::from(a < b);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        wins >= 19 && secs < 120.0,
        format!(
            "reference agent below random search in {wins}/20 seeds (mean {:.3} vs {:.3}), {secs:.1} s",
            sum_cem / 20.0,
            sum_random / 20.0
        ),
    );
}

// ---- CLI helpers

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corpusnil"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, value: Value) -> String {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---- 6: proximity and mapping contract

#[test]
fn criterion_6_proximity_contract() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(
        dir.path(),
        "ritual.json",
        json!({"mode": "ritual", "seed": 6, "output_dir": "out", "ritual": {"episodes": 40}}),
    );
    let summary = ok(run(&["run-ritual", "--config", &c]));
    let target: Vec<f64> = summary["target"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d.as_f64().unwrap())
        .collect();
    let steps = jsonl(&dir.path().join("out/logs/steps.jsonl"));
    let d = DirectiveConfig::default();
    let mut mismatches = 0usize;
    let mut volume_by_class: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for step in &steps {
        let pos = step["position"].as_array().unwrap();
        for i in 0..DIMS {
            let dist = (pos[i].as_f64().unwrap() - target[i]).abs();
            let p: u8 = if dist <= 0.5 {
                3
            } else if dist <= 2.0 {
                2
            } else {
                1
            };
            let far = f64::from(3 - p) / 2.0;
            let volume = d.v_min + far * (d.v_max - d.v_min);
            let brightness = d.b_min + far * (d.b_max - d.b_min);
            let logged = step["proximity"][i].as_u64().unwrap();
            if logged != u64::from(p)
                || step["volume"][i].as_f64() != Some(volume)
                || step["brightness"][i].as_f64() != Some(brightness)
            {
                mismatches += 1;
            }
            volume_by_class
                .entry(logged)
                .or_default()
                .push(step["volume"][i].as_f64().unwrap());
        }
    }
    let in_scale = volume_by_class.keys().all(|k| (1..=3).contains(k));
    let level = |k: u64| volume_by_class.get(&k).map(|v| v[0]);
    let constant = volume_by_class.values().all(|v| v.iter().all(|x| *x == v[0]));
    let decreasing = matches!((level(1), level(2), level(3)), (Some(a), Some(b), Some(c)) if a > b && b > c);
    report(
        6,
        steps.len() == 2000 && mismatches == 0 && in_scale && constant && decreasing,
        format!(
            "{} steps, {mismatches} mismatching values, scale {{1,2,3}}: {in_scale}, volume strictly decreasing in proximity: {decreasing}",
            steps.len()
        ),
    );
}

// ---- 7: end-to-end reproducibility

/// Every artifact except `meta.json`, the only file allowed to carry
/// timestamps.
fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "meta.json" {
                out.insert(path.strip_prefix(root).unwrap().to_owned(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn criterion_7_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let profile = json!({"events": [
        {"onset": 0.4, "peak_level": 0.8, "rise_time": 0.1, "decay_time": 0.3},
        {"onset": 2.0, "peak_level": 0.5, "rise_time": 0.3, "decay_time": 0.5}],
        "noise_floor": 0.01});
    let sources = json!([
        {"type": "synth", "channel": 0, "kind": "emg", "duration": 4.0, "profile": profile},
        {"type": "synth", "channel": 1, "kind": "mmg", "duration": 4.0, "profile": profile}
    ]);
    let cal = write_config(
        dir.path(),
        "calibrate.json",
        json!({"mode": "corpus", "seed": 3, "output_dir": "cal",
               "corpus": {"sources": sources, "demos_dir": "demos"}}),
    );
    ok(run(&["train-nuance", "--config", &cal, "--record", "a", "--label", "0.8,0.3,0.2"]));
    ok(run(&["train-nuance", "--config", &cal, "--seed", "4", "--record", "b", "--label", "0.2,0.6,0.7"]));
    let corpus = write_config(
        dir.path(),
        "corpus.json",
        json!({"mode": "corpus", "seed": 3, "output_dir": "corpus",
               "corpus": {"sources": sources, "nuance_model": "demos/model.json"}}),
    );
    let ritual = write_config(
        dir.path(),
        "ritual.json",
        json!({"mode": "ritual", "seed": 9, "output_dir": "ritual", "ritual": {"episodes": 30}}),
    );
    let mut identical = Vec::new();
    for (cmd, config, out) in [("run-corpus", &corpus, "corpus"), ("run-ritual", &ritual, "ritual")] {
        let root = dir.path().join(out);
        ok(run(&[cmd, "--config", config]));
        let first = artifacts(&root);
        ok(run(&[cmd, "--config", config]));
        let second = artifacts(&root);
        let differing: Vec<_> = first
            .keys()
            .chain(second.keys())
            .filter(|k| first.get(*k) != second.get(*k))
            .map(|k| k.display().to_string())
            .collect();
        identical.push(format!("{cmd}: {} files, differing {differing:?}", first.len()));
        assert!(first.keys().any(|k| k.ends_with("config.json")));
        if !differing.is_empty() || first.len() < 3 {
            report(7, false, identical.join("; "));
        }
    }
    report(7, true, identical.join("; "));
}

// ---- 8: protocol conformance

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_text(ws: &mut Ws) -> Value {
    use futures_util::StreamExt;
    loop {
        let msg = ws.next().await.unwrap().unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

#[test]
fn criterion_8_protocol_conformance() {
    use futures_util::SinkExt;
    use tokio_tungstenite::tungstenite::Message;

    let mut child = Command::new(env!("CARGO_BIN_EXE_corpusnil"))
        .args(["serve", "--port", "0", "--speed", "4", "--seed", "8"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"]
        .as_str()
        .unwrap()
        .to_owned();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let (answered, sent, alive_after) = rt.block_on(async {
        let url = format!("ws://{addr}");
        let (mut ws, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        let first = tokio::time::timeout(Duration::from_secs(10), next_text(&mut ws)).await.unwrap();
        assert_eq!(first["type"], "snapshot");

        let label = json!({"tension": 0.7, "abruptness": 0.2, "relaxation": 0.3});
        let script: Vec<(Message, Option<u64>, Option<&str>)> = {
            let cmd = |seq: u64, kind: &str, payload: Value| {
                Message::text(json!({"v": 1, "seq": seq, "t": 0.0, "type": kind, "payload": payload}).to_string())
            };
            vec![
                (Message::text("{not json"), None, Some("err")),
                (Message::binary(vec![0u8, 1, 2]), None, Some("err")),
                (Message::text(r#"{"v":2,"seq":1,"type":"start"}"#), Some(1), Some("err")),
                (cmd(2, "dance", json!({})), Some(2), Some("err")),
                (cmd(3, "start", json!({})), Some(3), Some("ack")),
                (cmd(4, "record_demo", json!({"label": label})), Some(4), Some("ack")),
                (cmd(5, "end_demo", json!({})), Some(5), Some("ack")),
                (cmd(6, "record_demo", json!({"label": {"tension": 0.1, "abruptness": 0.8, "relaxation": 0.9}})), Some(6), Some("ack")),
                (cmd(7, "end_demo", json!({})), Some(7), Some("ack")),
                (cmd(8, "train", json!({"lambda": 0.01})), Some(8), Some("ack")),
                (cmd(9, "set_gain", json!({"i": 2, "j": 3, "value": 0.2})), Some(9), Some("ack")),
                (cmd(10, "set_gain", json!({"i": 2, "j": 30, "value": 0.2})), Some(10), Some("err")),
                (cmd(11, "set_thresholds", json!({"t_hi": 0.4, "t_lo": 1.5})), Some(11), Some("ack")),
                (cmd(12, "set_thresholds", json!({"t_hi": 3.0})), Some(12), Some("err")),
                (cmd(13, "agent_pause", json!({})), Some(13), Some("ack")),
                (cmd(14, "agent_resume", json!({})), Some(14), Some("ack")),
                (cmd(15, "set_sigma", json!({"value": 0.25})), Some(15), Some("ack")),
                (cmd(16, "set_sigma", json!({"value": 0.0})), Some(16), Some("err")),
                (cmd(17, "set_gain", json!({"i": 0})), Some(17), Some("err")),
                (cmd(18, "takeover", json!({})), Some(18), Some("ack")),
                (cmd(18, "takeover", json!({})), Some(18), Some("ack")),
                (cmd(19, "stop", json!({})), Some(19), Some("ack")),
            ]
        };
        let sent = script.len();
        let mut answered = 0;
        for (msg, seq, expected) in script {
            let is_end = matches!(&msg, Message::Text(t) if t.contains("end_demo"));
            if is_end {
                // give the demonstration some feature rows
                tokio::time::sleep(Duration::from_millis(400)).await;
            }
            ws.send(msg).await.unwrap();
            let response = tokio::time::timeout(Duration::from_secs(10), async {
                loop {
                    let v = next_text(&mut ws).await;
                    if (v["type"] == "ack" || v["type"] == "err") && v["payload"]["seq"] == json!(seq) {
                        return v;
                    }
                }
            })
            .await;
            if let Ok(v) = response {
                if expected.is_none_or(|e| v["type"] == e) {
                    answered += 1;
                }
            }
        }
        ws.close(None).await.ok();
        // the service is still up and serves a fresh client
        let (mut again, _) = tokio_tungstenite::connect_async(&url).await.unwrap();
        let snap = tokio::time::timeout(Duration::from_secs(10), next_text(&mut again)).await.unwrap();
        (answered, sent, snap["type"] == "snapshot")
    });
    let running = child.try_wait().unwrap().is_none();
    child.kill().ok();
    child.wait().ok();
    report(
        8,
        answered == sent && alive_after && running,
        format!("{answered}/{sent} messages answered as expected, service up afterwards: {}", alive_after && running),
    );
}
