//! Live service: streams engine state to operator consoles over websockets
//! and accepts control and calibration commands. The wire protocol is
//! described in `docs/protocol.md`.

mod engine;
pub mod protocol;
mod server;

pub use engine::{Engine, Frame, SLOW_EVERY};
pub use server::{Bridge, BridgeOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Session(#[from] corpusnil_session::SessionError),

    #[error("cannot listen on {0}: {1}")]
    Bind(String, #[source] std::io::Error),

    #[error("cannot start the engine thread: {0}")]
    Thread(#[source] std::io::Error),

    #[error("invalid service options: {0}")]
    Options(String),
}

impl From<corpusnil_core::Error> for BridgeError {
    fn from(e: corpusnil_core::Error) -> Self {
        BridgeError::Session(e.into())
    }
}
