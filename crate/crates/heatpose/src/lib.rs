//! File formats, thread-pool batch decoding, benchmarks, synthetic data and
//! the `heatpose` command line on top of [`heatpose_core`].
//!
//! - [`hmt`] – the HMT heatmap batch format.
//! - [`tensors`] – named-tensor container for context-mixer parameters.
//! - [`coco`] – COCO-style annotation, detection and result JSON.
//! - [`skeleton`] – skeleton and alignment-table JSON, bundled COCO data.
//! - [`batch`] – parallel decode with optional flip fusion.
//! - [`bench`] – timing of the heatmap-to-coordinate stage.
//! - [`synth`] – seeded synthetic heatmaps with exact centers.
//! - [`cli`] – subcommand definitions and dispatch.

pub mod batch;
pub mod bench;
pub mod cli;
pub mod coco;
pub mod error;
mod fsutil;
pub mod hmt;
pub mod skeleton;
pub mod synth;
pub mod tensors;

pub use error::{Error, Result};
pub use heatpose_core as core;
