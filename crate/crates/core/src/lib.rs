//! Class-incremental object detection experiments.
//!
//! Geometry and dataset types, COCO-style detection metrics with
//! continual-learning summaries (ACC, BWT), replay selection (ER, MIR,
//! forgetting-aware), a simulated detector and a line-JSON protocol for
//! external ones, an experiment runner, and pseudo-label post-processing.

pub mod annotate;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod replay;
pub mod runner;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
