//! Joint alignment of moving-camera video frames and robust panoramic
//! background estimation.
//!
//! The pipeline has four stages:
//!
//! 1. [`ja::fit`] jointly aligns all frames into a shared scene domain by
//!    optimizing one invertible transform per frame against a target mean
//!    built from decayed memory accumulators.
//! 2. [`moments::compute_moments`] forms trimmed per-pixel means and
//!    variances of the aligned pixel stacks.
//! 3. [`background::estimate_background`] unwarps those panoramic moments
//!    back onto each input frame.
//! 4. [`eval`] scores the backgrounds against foreground annotations with
//!    ROC curves and AUC.

pub mod background;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod ja;
pub mod moments;
pub mod optim;
pub mod pipeline;
pub mod robust;
pub mod synth;
pub mod transform;
pub mod warp;

pub use error::{Error, Result};
pub use transform::{Matrix3, TransformKind, TransformParams};
pub use warp::{Frame, SceneDomain, WarpedFrame};
