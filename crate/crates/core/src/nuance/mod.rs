//! Learning movement nuances from operator demonstrations.
//!
//! An operator records a few labelled demonstrations; a ridge regression on
//! standardised feature rows maps every later feature vector to a nuance
//! triple (tension, abruptness, relaxation), which in turn drives the
//! oscillator network through [`ActionMapper`].

mod mapping;
mod model;
mod store;

pub use mapping::{map_to_actions, ActionMapper, MappingConfig};
pub use model::{fit, train, NuanceModel, Prediction, FALLBACK_LAMBDA};
pub use store::{DemoStore, Demonstration, NuanceTarget};
