use std::time::Duration;

use corpusnil_bridge::{Bridge, BridgeOptions};
use corpusnil_session::{CorpusConfig, Mode, RitualConfig, SessionConfig};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::time::{timeout, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn config() -> SessionConfig {
    SessionConfig {
        mode: Mode::Corpus,
        seed: 5,
        output_dir: "unused".into(),
        corpus: CorpusConfig::default(),
        ritual: RitualConfig {
            steps_per_episode: 10,
            ..RitualConfig::default()
        },
    }
}

async fn bridge(speed: f64) -> Bridge {
    let options = BridgeOptions {
        speed,
        ..BridgeOptions::default()
    };
    Bridge::bind(config(), "127.0.0.1:0", options).await.unwrap()
}

struct Client {
    ws: Ws,
    /// Every envelope received, in order.
    seen: Vec<Value>,
}

impl Client {
    async fn connect(bridge: &Bridge) -> Client {
        let (ws, _) = connect_async(format!("ws://{}", bridge.local_addr()))
            .await
            .unwrap();
        Client {
            ws,
            seen: Vec::new(),
        }
    }

    async fn next(&mut self) -> Value {
        loop {
            let msg = timeout(Duration::from_secs(10), self.ws.next())
                .await
                .expect("message within 10 s")
                .expect("stream open")
                .unwrap();
            if let Message::Text(t) = msg {
                let v: Value = serde_json::from_str(&t).unwrap();
                assert_eq!(v["v"], 1);
                self.seen.push(v.clone());
                return v;
            }
        }
    }

    async fn send_raw(&mut self, text: String) {
        self.ws.send(Message::text(text)).await.unwrap();
    }

    /// Wait for the response (`ack` or `err`) to the command with `seq`.
    async fn response(&mut self, seq: Option<u64>) -> Value {
        loop {
            let v = self.next().await;
            if (v["type"] == "ack" || v["type"] == "err") && v["payload"]["seq"] == json!(seq) {
                return v;
            }
        }
    }

    async fn command(&mut self, seq: u64, kind: &str, payload: Value) -> Value {
        self.send_raw(json!({"v": 1, "seq": seq, "t": 0.0, "type": kind, "payload": payload}).to_string())
            .await;
        self.response(Some(seq)).await
    }

    async fn frames_of(&mut self, kind: &str, n: usize) -> Vec<Value> {
        let mut out = Vec::new();
        while out.len() < n {
            let v = self.next().await;
            if v["type"] == kind {
                out.push(v);
            }
        }
        out
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn first_message_is_a_full_snapshot() {
    let bridge = bridge(1.0).await;
    let mut c = Client::connect(&bridge).await;
    let first = c.next().await;
    assert_eq!(first["type"], "snapshot");
    assert_eq!(first["seq"], 1);
    let p = &first["payload"];
    for key in ["running", "features", "regime", "oscnet_state", "model", "ritual", "connection", "operator"] {
        assert!(p.get(key).is_some(), "snapshot lacks {key}");
    }
    assert_eq!(p["oscnet_state"]["oscillators"].as_array().unwrap().len(), 20);
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn every_command_is_answered() {
    let bridge = bridge(4.0).await;
    let mut c = Client::connect(&bridge).await;
    c.next().await;
    let l = json!({"tension": 0.8, "abruptness": 0.3, "relaxation": 0.1});
    let script = [
        ("start", json!({}), "ack"),
        ("record_demo", json!({"label": l}), "ack"),
        ("end_demo", json!({}), "ack"),
        ("record_demo", json!({"label": {"tension": 0.1, "abruptness": 0.9, "relaxation": 0.6}}), "ack"),
        ("end_demo", json!({}), "ack"),
        ("train", json!({"lambda": 0.01}), "ack"),
        ("set_gain", json!({"i": 0, "j": 1, "value": 0.1}), "ack"),
        ("set_gain", json!({"i": 0, "j": 1, "value": 50.0}), "err"),
        ("set_thresholds", json!({"t_hi": 0.6, "t_lo": 1.8}), "ack"),
        ("set_thresholds", json!({"t_hi": 2.0, "t_lo": 1.0}), "err"),
        ("agent_pause", json!({}), "ack"),
        ("agent_resume", json!({}), "ack"),
        ("set_sigma", json!({"value": 0.3}), "ack"),
        ("set_sigma", json!({"value": -1.0}), "err"),
        ("takeover", json!({}), "ack"),
        ("stop", json!({}), "ack"),
    ];
    let mut seq = 10;
    for (kind, payload, expected) in script {
        if kind == "end_demo" {
            // let some feature rows accumulate
            c.frames_of("features", 10).await;
        }
        seq += 1;
        let r = c.command(seq, kind, payload).await;
        assert_eq!(r["type"], expected, "{kind}: {r}");
        if kind == "train" {
            assert!(r["payload"]["rows"].as_u64().unwrap() > 0);
            assert_eq!(r["payload"]["lambda"], 0.01);
        }
        if expected == "err" {
            assert!(r["payload"]["reason"].as_str().is_some_and(|s| !s.is_empty()));
        }
    }
    // outbound seq strictly increases on this connection
    let seqs: Vec<u64> = c.seen.iter().map(|v| v["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[1] > w[0]));
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_input_keeps_the_connection_open() {
    let bridge = bridge(1.0).await;
    let mut c = Client::connect(&bridge).await;
    c.next().await;
    c.send_raw("{oops".into()).await;
    let r = c.response(None).await;
    assert_eq!(r["type"], "err");
    c.ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    assert_eq!(c.response(None).await["type"], "err");
    c.send_raw(json!({"v": 1, "seq": 1, "type": "juggle", "payload": {}}).to_string())
        .await;
    let r = c.response(Some(1)).await;
    assert_eq!(r["type"], "err");
    assert!(r["payload"]["reason"].as_str().unwrap().contains("juggle"));
    assert_eq!(c.command(2, "start", json!({})).await["type"], "ack");
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn retries_replay_and_stale_seqs_fail() {
    let bridge = bridge(1.0).await;
    let mut c = Client::connect(&bridge).await;
    c.next().await;
    let first = c.command(5, "set_sigma", json!({"value": 0.4})).await;
    let again = c.command(5, "set_sigma", json!({"value": 0.9})).await;
    assert_eq!(first["payload"], again["payload"]);
    assert_eq!(again["payload"]["sigma"], 0.4);
    let stale = c.command(3, "start", json!({})).await;
    assert_eq!(stale["type"], "err");
    // the replayed retry had no effect
    let mut other = Client::connect(&bridge).await;
    let snap = other.next().await;
    assert_eq!(snap["payload"]["ritual"]["sigma"], 0.4);
    assert_eq!(snap["payload"]["running"], false);
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn one_operator_at_a_time() {
    let bridge = bridge(1.0).await;
    let mut a = Client::connect(&bridge).await;
    let mut b = Client::connect(&bridge).await;
    let a_id = a.next().await["payload"]["connection"].clone();
    let b_id = b.next().await["payload"]["connection"].clone();
    assert_ne!(a_id, b_id);
    assert_eq!(a.command(1, "start", json!({})).await["type"], "ack");
    let denied = b.command(1, "stop", json!({})).await;
    assert_eq!(denied["type"], "err");
    assert!(denied["payload"]["reason"].as_str().unwrap().contains("takeover"));
    let took = b.command(2, "takeover", json!({})).await;
    assert_eq!(took["type"], "ack");
    assert_eq!(took["payload"]["previous"], a_id);
    assert_eq!(b.command(3, "stop", json!({})).await["type"], "ack");
    assert_eq!(a.command(2, "start", json!({})).await["type"], "err");
    // the lock is released when its holder leaves
    b.ws.close(None).await.unwrap();
    drop(b);
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(a.command(3, "start", json!({})).await["type"], "ack");
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_rates_stay_within_budget() {
    let bridge = bridge(8.0).await;
    let mut c = Client::connect(&bridge).await;
    c.next().await;
    c.command(1, "start", json!({})).await;
    let start = Instant::now();
    let mut counts = std::collections::HashMap::<String, usize>::new();
    while start.elapsed() < Duration::from_secs(2) {
        let v = c.next().await;
        *counts.entry(v["type"].as_str().unwrap().to_owned()).or_default() += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = |k: &str| counts.get(k).copied().unwrap_or(0) as f64 / secs;
    assert!(rate("features") <= 40.0 * 1.05, "{counts:?}");
    assert!(rate("regime") <= 40.0 * 1.05, "{counts:?}");
    assert!(rate("oscnet_state") <= 10.0 * 1.05, "{counts:?}");
    assert!(rate("ritual_proximity") <= 10.0 * 1.05, "{counts:?}");
    assert!(rate("features") > 10.0, "{counts:?}");
    assert!(counts.get("ritual_episode").copied().unwrap_or(0) >= 1, "{counts:?}");
    bridge.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn a_stalled_client_does_not_hold_up_others() {
    let bridge = bridge(8.0).await;
    let mut fast = Client::connect(&bridge).await;
    let _stalled = Client::connect(&bridge).await;
    fast.next().await;
    fast.command(1, "start", json!({})).await;
    // the stalled client never reads; the fast one keeps receiving fresh
    // frames with advancing engine time
    let times: Vec<f64> = fast
        .frames_of("features", 60)
        .await
        .iter()
        .map(|v| v["payload"]["time"].as_f64().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!(times.last().unwrap() - times[0] > 5.0);
    assert_eq!(fast.command(2, "stop", json!({})).await["type"], "ack");
    bridge.shutdown().await;
}
