//! Change detection for daily urban nighttime-light (NTL) radiance series.
//!
//! Per-city forecasters (fully connected, 1-D convolutional and LSTM) learn
//! baseline behaviour from pre-change windows. Observations that deviate from
//! their weighted ensemble forecast are flagged, grouped into persistent
//! segments and characterized by severity, direction, start/end rates and
//! recovery phase.

pub mod cli;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
