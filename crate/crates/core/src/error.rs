use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported recording {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("recording {0} contains no samples")]
    EmptyRecording(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid filter band [{lo}, {hi}] Hz at sample rate {sample_rate} Hz")]
    InvalidBand { lo: f64, hi: f64, sample_rate: f64 },

    #[error("omega {omega} rad/s is at or above the Nyquist limit for {sample_rate} Hz")]
    AboveNyquist { omega: f64, sample_rate: f64 },

    #[error("calibration maximum for {what} on channel {channel} is zero; run a calibration pass first")]
    Uncalibrated { what: &'static str, channel: usize },

    #[error("segment after the peak is not decaying")]
    NonDecaying,

    #[error("demonstration {id} conflicts with an existing entry of the same id")]
    DuplicateDemonstration { id: String },

    #[error("invalid demonstration: {0}")]
    InvalidDemonstration(String),

    #[error("training features are degenerate (all rows identical); record more varied demonstrations")]
    DegenerateFeatures,

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("oscillator index {0} out of range 0..20")]
    OscIndex(usize),

    #[error("clock moved backwards from {from} s to {to} s")]
    ClockRegression { from: f64, to: f64 },

    #[error("malformed pattern bank: {0}")]
    PatternBank(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
