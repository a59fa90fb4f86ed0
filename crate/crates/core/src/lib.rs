//! Simulator and codec for storing bit images in dipolar-coupled spin clusters
//! as multi-harmonic weak-pulse excitations, read back with a two-pulse
//! spin-locking experiment.

pub mod cli;
pub mod codec;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod ops;
pub mod waveform;

pub use error::{Error, Result};
