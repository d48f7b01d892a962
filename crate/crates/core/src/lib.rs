//! Event-driven, energy-budgeted continual learning for fault detection on
//! constrained IoT devices.
//!
//! A device monitors a sensor stream with a small neural detector. When it
//! flags a fault it uploads a window of samples; the server labels them,
//! retrains the model, compresses it to fit the remaining energy budget and
//! sends it back. The crate simulates that loop end to end with a
//! deterministic link, and can also run it over a TCP loopback.

pub mod cli;
pub mod compression;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod link;
pub mod model;
pub mod planner;
pub mod runtime;

pub use error::{Error, Result};
