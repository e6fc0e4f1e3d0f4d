//! Post-inference engine for weakly supervised sea-ice segmentation.
//!
//! Stages, in pipeline order: [`ingest`] normalizes channels, [`tiling`]
//! plans overlapping windows and stitches their logits, [`regularize`]
//! blurs the stitched map, [`calibrate`] stretches it to saturated
//! probabilities and binarizes, and [`metrics`] checks polygon-level
//! consistency. [`weaksup`] trains a small model from polygon labels and
//! [`synth`] produces scenes with known truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod ingest;
pub mod labels;
pub mod metrics;
mod parallel;
pub mod pipeline;
pub mod raster;
pub mod regularize;
pub mod rng;
pub mod synth;
pub mod tiling;
pub mod weaksup;

pub use error::{Error, Result};
pub use parallel::default_workers;
pub use raster::{Raster, Scene};
