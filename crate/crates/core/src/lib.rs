//! Simulation-based assessment of inference methods.
//!
//! Hold the empirical design fixed, regenerate outcomes (or shocks) under a
//! null, rerun the method under audit and report how often it rejects.

pub mod datamodel;
pub mod designs;
pub mod engine;
pub mod error;
pub mod errorgen;
pub mod matching;
pub mod presets;
pub mod regression;
pub mod report;
pub mod resampling;
pub mod rng;
pub mod variance;

pub use error::{Error, Result};
