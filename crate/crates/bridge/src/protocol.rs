//! Wire types. Every message in both directions is a JSON text frame
//!
//! ```json
//! {"v": 1, "seq": 12, "t": 3.25, "type": "set_gain", "payload": {"i": 0, "j": 1, "value": 0.2}}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub seq: u64,
    /// Seconds since the service started.
    pub t: f64,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: Value,
}

/// Label of a demonstration, each component in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Label {
    pub tension: f64,
    pub abruptness: f64,
    pub relaxation: f64,
}

/// Operator commands. `takeover` is handled by the service itself; all
/// others go through the engine's queue.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Start,
    Stop,
    RecordDemo { label: Label, id: Option<String> },
    EndDemo,
    Train { lambda: Option<f64> },
    SetGain { i: usize, j: usize, value: f64 },
    SetThresholds {
        t_hi: Option<f64>,
        t_lo: Option<f64>,
        closest_is_three: Option<bool>,
    },
    AgentPause,
    AgentResume,
    SetSigma { value: f64 },
    Takeover,
}

pub const COMMANDS: [&str; 11] = [
    "start",
    "stop",
    "record_demo",
    "end_demo",
    "train",
    "set_gain",
    "set_thresholds",
    "agent_pause",
    "agent_resume",
    "set_sigma",
    "takeover",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordDemo {
    label: Label,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Train {
    #[serde(default)]
    lambda: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetGain {
    i: usize,
    j: usize,
    value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetThresholds {
    #[serde(default)]
    t_hi: Option<f64>,
    #[serde(default)]
    t_lo: Option<f64>,
    #[serde(default)]
    closest_is_three: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetSigma {
    value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

/// What a client sent, after parsing as far as possible.
#[derive(Debug, PartialEq)]
pub enum Inbound {
    Command { seq: u64, command: Command },
    /// A well-formed envelope of a type the service does not know.
    Unknown { seq: Option<u64>, kind: String },
    /// Anything that cannot be acted on; `seq` when it could be recovered.
    Invalid { seq: Option<u64>, reason: String },
}

fn payload<T: for<'de> Deserialize<'de>>(kind: &str, value: Value) -> Result<T, String> {
    serde_json::from_value(value).map_err(|e| format!("bad {kind} payload: {e}"))
}

pub fn parse(text: &str) -> Inbound {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return Inbound::Invalid {
                seq: None,
                reason: format!("malformed JSON: {e}"),
            }
        }
    };
    let Value::Object(mut obj) = value else {
        return Inbound::Invalid {
            seq: None,
            reason: "message must be a JSON object".into(),
        };
    };
    let seq = obj.get("seq").and_then(Value::as_u64);
    let invalid = |reason: String| Inbound::Invalid { seq, reason };
    match obj.get("v").and_then(Value::as_u64) {
        Some(v) if v == u64::from(VERSION) => {}
        _ => return invalid(format!("missing or unsupported protocol version; expected v={VERSION}")),
    }
    let Some(seq) = seq else {
        return invalid("seq must be a non-negative integer".into());
    };
    let Some(kind) = obj.get("type").and_then(Value::as_str).map(str::to_owned) else {
        return invalid("type must be a string".into());
    };
    let body = match obj.remove("payload") {
        None | Some(Value::Null) => json!({}),
        Some(p @ Value::Object(_)) => p,
        Some(_) => return invalid("payload must be an object".into()),
    };
    let command = match kind.as_str() {
        "start" | "stop" | "end_demo" | "agent_pause" | "agent_resume" | "takeover" => {
            if let Err(e) = payload::<Empty>(&kind, body) {
                return invalid(e);
            }
            match kind.as_str() {
                "start" => Command::Start,
                "stop" => Command::Stop,
                "end_demo" => Command::EndDemo,
                "agent_pause" => Command::AgentPause,
                "agent_resume" => Command::AgentResume,
                _ => Command::Takeover,
            }
        }
        // serde would also take a struct from an array; the protocol says
        // object
        "record_demo" if !body["label"].is_object() => {
            return invalid("bad record_demo payload: label must be an object".into())
        }
        "record_demo" => match payload::<RecordDemo>(&kind, body) {
            Ok(p) => Command::RecordDemo {
                label: p.label,
                id: p.id,
            },
            Err(e) => return invalid(e),
        },
        "train" => match payload::<Train>(&kind, body) {
            Ok(p) => Command::Train { lambda: p.lambda },
            Err(e) => return invalid(e),
        },
        "set_gain" => match payload::<SetGain>(&kind, body) {
            Ok(p) => Command::SetGain {
                i: p.i,
                j: p.j,
                value: p.value,
            },
            Err(e) => return invalid(e),
        },
        "set_thresholds" => match payload::<SetThresholds>(&kind, body) {
            Ok(p) => Command::SetThresholds {
                t_hi: p.t_hi,
                t_lo: p.t_lo,
                closest_is_three: p.closest_is_three,
            },
            Err(e) => return invalid(e),
        },
        "set_sigma" => match payload::<SetSigma>(&kind, body) {
            Ok(p) => Command::SetSigma { value: p.value },
            Err(e) => return invalid(e),
        },
        _ => {
            return Inbound::Unknown {
                seq: Some(seq),
                kind,
            }
        }
    };
    Inbound::Command { seq, command }
}

/// Payload of an `ack`: the command's seq merged with its result fields.
pub fn ack_payload(seq: u64, result: Value) -> Value {
    let mut obj = match result {
        Value::Object(m) => m,
        Value::Null => Default::default(),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    obj.insert("seq".into(), json!(seq));
    Value::Object(obj)
}

pub fn err_payload(seq: Option<u64>, reason: &str) -> Value {
    json!({ "seq": seq, "reason": reason })
}
