//! Simulation and analysis toolkit for energy-time entangled photon pairs
//! in the time-bin (Franson) configuration.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod detector;
pub mod error;
pub mod model;
pub mod optics;
pub mod oracle;
pub mod pipeline;
pub mod qkd;
pub mod rng;
pub mod source;
pub mod sweep;
pub mod tagio;

pub use error::{Error, Result};
pub use model::TimeTag;
