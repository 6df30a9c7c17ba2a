//! Session orchestration: one JSON config drives either the instrument
//! pipeline ([`run_corpus`]) or the ritual ([`run_ritual`]) offline, writing
//! a stable artifact layout:
//!
//! ```text
//! <output_dir>/
//!   config.json      resolved configuration
//!   meta.json        tool version, seed, status and wall-clock times
//!   audio/out.wav    rendered network (corpus mode)
//!   logs/            JSON Lines logs
//!   models/          calibration and nuance model used
//! ```
//!
//! Everything except `meta.json` is a pure function of config and seed.

mod artifacts;
pub mod config;
mod corpus;
mod error;
mod ritual;

pub use artifacts::{JsonlWriter, OutputDir, INCOMPLETE_MARKER};
pub use config::{AgentKind, CorpusConfig, Mode, RitualConfig, SessionConfig, SourceConfig};
pub use corpus::{analyze, load_model, load_sources, run_corpus, Analysis, CorpusReport, Performer};
pub use error::{Result, SessionError};
pub use ritual::{load_bank, run_ritual, RitualReport, RitualSession, StepRecord};
