//! Online detection of an emerging community in a stream of random graphs.
//!
//! Snapshots are undirected Erdos-Renyi graphs on a fixed node set. From an
//! unknown time on, every edge inside a hidden node subset appears with a
//! higher probability. The [`detect`] module holds the stopping rules,
//! [`theory`] the analytic average-run-length approximations and [`harness`]
//! the Monte Carlo machinery used to calibrate and compare them.

pub mod detect;
pub mod error;
pub mod graph;
pub mod harness;
pub mod stats;
pub mod theory;

pub use detect::{
    run_until_alarm, AnyDetector, Detector, DetectorConfig, Method, RunOutcome, StepReport,
};
pub use error::{Error, Result};
pub use graph::{GraphSnapshot, ScenarioSpec, StreamHandle};
