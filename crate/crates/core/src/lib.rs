//! Signal analysis and generative engines for a biophysical music instrument
//! and an episodic "ritual" agent.
//!
//! The instrument pipeline runs
//! [`signals`] → [`features`] / [`regime`] → [`nuance`] → [`oscnet`]:
//! muscle biosignals are band-limited, described by a small feature set and
//! by the parameters of a damped second-order model, mapped to expressive
//! nuances by a regression learned from demonstrations, and finally used to
//! steer a feedback network of twenty oscillators.
//!
//! The [`ritual`] module holds the second system: an agent searching a
//! 10-dimensional box for an arbitrary digit target, whose proximity to that
//! target is rendered as music and light event streams.

pub mod error;
pub mod features;
pub mod nuance;
pub mod oscnet;
pub mod regime;
pub mod ritual;
pub mod seed;
pub mod signals;

pub use error::{Error, Result};
