//! Backscatter ISAC joint beamforming: system model, analytic metrics,
//! SDR/SCA beamforming schemes and waveform-level Monte-Carlo checks.

pub mod linalg;
pub mod metrics;
pub mod model;
pub mod schemes;
pub mod simkit;

pub use linalg::{CMat, CVec};
