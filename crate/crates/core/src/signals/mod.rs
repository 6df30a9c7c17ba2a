//! Biosignal ingestion, synthetic ground-truth generators and band limiting.

mod filter;
mod frame;
mod synth;
mod wav;

pub use filter::{bandpass, Bandpass, BandpassSpec, Biquad};
pub use frame::{
    check_contiguous, concat_samples, frames_from_samples, ContractionEvent, ContractionProfile,
    SignalFrame, SignalKind, FRAME_LEN,
};
pub use synth::{synth_emg, synth_mmg, MmgModel};
pub use wav::{load_recording, load_recording_with_gain, write_wav_f32};

/// Default analysis band, in Hz.
pub const ANALYSIS_LO_HZ: f64 = 1.0;
pub const ANALYSIS_HI_HZ: f64 = 40.0;

pub const DEFAULT_EMG_RATE: f64 = 1000.0;
pub const DEFAULT_MMG_RATE: f64 = 4000.0;
