//! Websocket service around the [`Engine`].
//!
//! The engine runs on its own thread and is the only owner of state.
//! Connections talk to it through an ordered command queue; state frames
//! come back through a broadcast channel whose lagging receivers skip
//! stale frames, so a slow client can never stall the engine.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::engine::{Engine, Frame};
use crate::protocol::{ack_payload, err_payload, parse, Command, Envelope, Inbound, VERSION};
use crate::BridgeError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeOptions {
    /// Engine tick; features and regime are sent at most once per tick.
    pub tick: Duration,
    /// Engine seconds per wall-clock second.
    pub speed: f64,
    /// Start the engine without waiting for a `start` command.
    pub autostart: bool,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        BridgeOptions {
            tick: Duration::from_millis(25),
            speed: 1.0,
            autostart: false,
        }
    }
}

/// Responses remembered per connection for retried commands.
const REPLAY_CACHE: usize = 64;
const BROADCAST_CAPACITY: usize = 64;

struct Request {
    command: Command,
    reply: oneshot::Sender<Result<Value, String>>,
}

#[derive(Clone)]
struct Shared {
    commands: mpsc::Sender<Request>,
    frames: broadcast::Sender<Arc<Frame>>,
    snapshot: watch::Receiver<Arc<Value>>,
    operator: Arc<Mutex<Option<u64>>>,
    started: Instant,
}

pub struct Bridge {
    addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    accept: JoinHandle<()>,
    engine: Option<thread::JoinHandle<()>>,
    stop_engine: Option<mpsc::Sender<Request>>,
}

fn engine_loop(
    mut engine: Engine,
    options: BridgeOptions,
    commands: mpsc::Receiver<Request>,
    frames: broadcast::Sender<Arc<Frame>>,
    snapshot: watch::Sender<Arc<Value>>,
) {
    let mut last = Instant::now();
    let mut next = last + options.tick;
    loop {
        let wait = next.saturating_duration_since(Instant::now());
        match commands.recv_timeout(wait) {
            Ok(req) => {
                let result = engine.handle(req.command);
                snapshot.send_replace(Arc::new(engine.snapshot()));
                // the connection may be gone; the effect stands regardless
                let _ = req.reply.send(result);
                continue;
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
        }
        let started = Instant::now();
        let dt = (started - last).as_secs_f64() * options.speed;
        last = started;
        for frame in engine.tick(dt) {
            // no receivers is fine
            let _ = frames.send(Arc::new(frame));
        }
        snapshot.send_replace(Arc::new(engine.snapshot()));
        // measured from this tick's start so frames never come closer than
        // one tick apart, however late this tick ran
        next = started + options.tick;
    }
}

impl Bridge {
    /// Build the engine, bind `addr` and start serving.
    pub async fn bind(
        config: corpusnil_session::SessionConfig,
        addr: &str,
        options: BridgeOptions,
    ) -> Result<Bridge, BridgeError> {
        if !(options.speed.is_finite() && options.speed > 0.0) || options.tick.is_zero() {
            return Err(BridgeError::Options(format!(
                "speed must be positive and tick non-zero, got speed {} tick {:?}",
                options.speed, options.tick
            )));
        }
        let mut engine = Engine::new(config)?;
        if options.autostart {
            let _ = engine.handle(Command::Start);
        }
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|e| BridgeError::Bind(addr.to_owned(), e))?;
        let local = listener
            .local_addr()
            .map_err(|e| BridgeError::Bind(addr.to_owned(), e))?;

        let (cmd_tx, cmd_rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(BROADCAST_CAPACITY);
        let (snap_tx, snap_rx) = watch::channel(Arc::new(engine.snapshot()));
        let engine_frames = frames.clone();
        let engine_thread = thread::Builder::new()
            .name("corpusnil-engine".into())
            .spawn(move || engine_loop(engine, options, cmd_rx, engine_frames, snap_tx))
            .map_err(BridgeError::Thread)?;

        let shared = Shared {
            commands: cmd_tx.clone(),
            frames,
            snapshot: snap_rx,
            operator: Arc::new(Mutex::new(None)),
            started: Instant::now(),
        };
        let (shutdown, mut shutdown_rx) = watch::channel(false);
        let accept = tokio::spawn(async move {
            let ids = AtomicU64::new(1);
            loop {
                tokio::select! {
                    _ = shutdown_rx.changed() => break,
                    accepted = listener.accept() => match accepted {
                        Ok((stream, peer)) => {
                            let id = ids.fetch_add(1, Ordering::Relaxed);
                            let shared = shared.clone();
                            let stop = shutdown_rx.clone();
                            tokio::spawn(async move {
                                if let Err(e) = connection(stream, id, shared, stop).await {
                                    log::debug!("connection {id} from {peer} ended: {e}");
                                }
                            });
                        }
                        Err(e) => log::warn!("accept failed: {e}"),
                    },
                }
            }
        });
        Ok(Bridge {
            addr: local,
            shutdown,
            accept,
            engine: Some(engine_thread),
            stop_engine: Some(cmd_tx),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Close all connections and stop the engine.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        let _ = (&mut self.accept).await;
        // the engine exits once every command sender is gone; connection
        // tasks drop theirs as they see the shutdown signal
        self.stop_engine.take();
        if let Some(handle) = self.engine.take() {
            let _ = tokio::task::spawn_blocking(move || handle.join()).await;
        }
    }
}

/// Per-connection command bookkeeping: seq must strictly increase, and a
/// repeated seq replays the cached response instead of re-executing.
struct SeqState {
    last: Option<u64>,
    cache: VecDeque<(u64, &'static str, Value)>,
}

impl SeqState {
    fn cached(&self, seq: u64) -> Option<(&'static str, Value)> {
        self.cache
            .iter()
            .find(|(s, _, _)| *s == seq)
            .map(|(_, k, v)| (*k, v.clone()))
    }

    fn remember(&mut self, seq: u64, kind: &'static str, payload: Value) {
        self.last = Some(seq);
        if self.cache.len() == REPLAY_CACHE {
            self.cache.pop_front();
        }
        self.cache.push_back((seq, kind, payload));
    }
}

async fn connection(
    stream: TcpStream,
    id: u64,
    shared: Shared,
    mut stop: watch::Receiver<bool>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    // subscribe before taking the snapshot so no frame falls between them
    let mut frames = shared.frames.subscribe();
    let mut out_seq = 0u64;
    let started = shared.started;
    let mut envelope = |kind: &str, payload: Value| {
        out_seq += 1;
        let env = Envelope {
            v: VERSION,
            seq: out_seq,
            t: started.elapsed().as_secs_f64(),
            kind: kind.to_owned(),
            payload,
        };
        Message::text(serde_json::to_string(&env).expect("envelope serialises"))
    };

    let mut snapshot = (**shared.snapshot.borrow()).clone();
    snapshot["connection"] = json!(id);
    snapshot["operator"] = json!(*shared.operator.lock().expect("operator lock"));
    sink.send(envelope("snapshot", snapshot)).await?;

    let mut seqs = SeqState {
        last: None,
        cache: VecDeque::new(),
    };
    let result = loop {
        tokio::select! {
            _ = stop.changed() => break Ok(()),
            frame = frames.recv() => match frame {
                Ok(f) => sink.send(envelope(f.kind, f.payload.clone())).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::debug!("connection {id} skipped {n} stale frames");
                }
                Err(broadcast::error::RecvError::Closed) => break Ok(()),
            },
            msg = source.next() => {
                let Some(msg) = msg else { break Ok(()) };
                let text = match msg? {
                    Message::Text(t) => t.to_string(),
                    Message::Binary(_) => {
                        let p = err_payload(None, "binary frames are not part of the protocol");
                        sink.send(envelope("err", p)).await?;
                        continue;
                    }
                    Message::Close(_) => break Ok(()),
                    _ => continue,
                };
                let (kind, payload) = respond(&text, id, &shared, &mut seqs).await;
                sink.send(envelope(kind, payload)).await?;
            }
        }
    };
    let released = {
        let mut operator = shared.operator.lock().expect("operator lock");
        let held = *operator == Some(id);
        if held {
            *operator = None;
        }
        held
    };
    if released {
        let _ = shared.frames.send(Arc::new(Frame {
            kind: "operator",
            payload: json!({ "connection": Value::Null }),
        }));
    }
    let _ = sink.close().await;
    result
}

/// Response type and payload for one inbound text message.
async fn respond(text: &str, id: u64, shared: &Shared, seqs: &mut SeqState) -> (&'static str, Value) {
    let (seq, command) = match parse(text) {
        Inbound::Command { seq, command } => (seq, command),
        Inbound::Unknown { seq, kind } => {
            log::warn!("connection {id}: ignoring message of unknown type '{kind}'");
            return ("err", err_payload(seq, &format!("unknown message type '{kind}'; ignored")));
        }
        Inbound::Invalid { seq, reason } => return ("err", err_payload(seq, &reason)),
    };
    if let Some(last) = seqs.last {
        if seq <= last {
            return match seqs.cached(seq) {
                Some(replay) => replay,
                None => (
                    "err",
                    err_payload(
                        Some(seq),
                        &format!("seq {seq} is not greater than the last command seq {last}"),
                    ),
                ),
            };
        }
    }
    let (kind, payload) = execute(seq, command, id, shared).await;
    seqs.remember(seq, kind, payload.clone());
    (kind, payload)
}

async fn execute(seq: u64, command: Command, id: u64, shared: &Shared) -> (&'static str, Value) {
    {
        let mut operator = shared.operator.lock().expect("operator lock");
        if command == Command::Takeover {
            let previous = operator.replace(id);
            drop(operator);
            if previous != Some(id) {
                let _ = shared.frames.send(Arc::new(Frame {
                    kind: "operator",
                    payload: json!({ "connection": id }),
                }));
            }
            return ("ack", ack_payload(seq, json!({ "operator": id, "previous": previous })));
        }
        match *operator {
            Some(holder) if holder != id => {
                return (
                    "err",
                    err_payload(
                        Some(seq),
                        &format!("connection {holder} holds the operator lock; send takeover to control the engine"),
                    ),
                );
            }
            Some(_) => {}
            None => {
                *operator = Some(id);
                let _ = shared.frames.send(Arc::new(Frame {
                    kind: "operator",
                    payload: json!({ "connection": id }),
                }));
            }
        }
    }
    let (reply, rx) = oneshot::channel();
    if shared.commands.send(Request { command, reply }).is_err() {
        return ("err", err_payload(Some(seq), "engine has stopped"));
    }
    match rx.await {
        Ok(Ok(result)) => ("ack", ack_payload(seq, result)),
        Ok(Err(reason)) => ("err", err_payload(Some(seq), &reason)),
        Err(_) => ("err", err_payload(Some(seq), "engine has stopped")),
    }
}
