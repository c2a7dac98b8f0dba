//! Aggregation of expert point forecasts into a bias-corrected,
//! expertise-weighted consensus, and measurement of how much that consensus
//! improves on the simple average.
//!
//! The pipeline: [`ingest`] builds a chronological panel of announcement
//! events; [`replay`] walks it under one [`aggregate::ModeConfig`], keeping
//! per-key error histories ([`bias`]), building regressors ([`features`]),
//! fitting one linear model per calendar quarter ([`model`]) and weighting
//! the next quarter's predictions ([`aggregate`]); [`evaluate`] scores the
//! result and [`matrix`] runs the full ablation set. [`synth`] generates
//! panels with known ground truth; [`runner`] ties it together with file
//! outputs.

pub mod aggregate;
pub mod bias;
pub mod calendar;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod model;
pub mod money;
pub mod replay;
pub mod runner;
pub mod synth;

pub use error::{Error, Result};
pub use money::Cents;
