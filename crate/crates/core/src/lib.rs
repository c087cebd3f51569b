#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Post-network half of a top-down human keypoint detector.
//!
//! Everything here is pure computation over owned buffers; the crate needs
//! `alloc` but not `std`. File formats, the CLI and thread pools live in the
//! `heatpose` companion crate.
//!
//! - [`model`] – skeletons, keypoints, poses and detection boxes.
//! - [`heatmap`] – Gaussian target encoding, MSE losses, Gaussian filtering
//!   and flip fusion with a sub-pixel shift.
//! - [`subpixel`] – argmax decoding with quarter-pixel, parabola and
//!   paraboloid refinement, and the crop-back to image coordinates.
//! - [`nms`] – OKS-IOU, hard OKS-NMS and coordinate-fusing soft-NMS.
//! - [`metrics`] – OKS against ground truth, greedy matching, AP/AR.
//! - [`prep`] – hard-negative mining, pseudo-label screening and skeleton
//!   alignment between datasets.
//! - [`context_mixer`] – forward-only reference of the context mixer decoder.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod context_mixer;
pub mod error;
pub mod heatmap;
mod math;
pub mod metrics;
pub mod model;
pub mod nms;
pub mod prep;
pub mod subpixel;

pub use error::{Error, Result};
pub use heatmap::{EncodeConfig, HeatmapStack};
pub use model::{DetectionBox, ImageId, Keypoint, Pose, SkeletonSpec, Visibility};
pub use subpixel::{DecodeOptions, PeakEstimate, Refinement};
