//! The ritual subsystem: an episodic agent searching a 10-dimensional box
//! for an arbitrary digit target, with its proximity to the target rendered
//! as music and light events.
//!
//! The flow per agent step is
//! position → [`proximity`] (scale {1, 2, 3}) → [`direct`] (volume,
//! brightness, pulse rate per pattern) → [`Scheduler`] (timestamped note
//! and light events). Closer means quieter and dimmer.

mod agent;
mod bank;
mod env;
mod proximity;
mod schedule;

pub use agent::{
    run_episode, CemAgent, CemConfig, EpisodeSummary, EpisodicAgent, RandomSearch, Trajectory,
};
pub use bank::{LightPoint, LightShape, MusicPattern, NoteSpec, PatternBank};
pub use env::{AgentState, RitualEnv, RitualTarget, DIMS, MAX_COORD};
pub use proximity::{
    direct, proximity, AVDirective, DirectiveConfig, DirectiveEntry, ProximityConfig,
    ProximityReport,
};
pub use schedule::{Event, Scheduler};
