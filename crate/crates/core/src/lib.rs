//! Aural-visual affect analysis pipeline.
//!
//! This crate implements the desk-scale building blocks of a two-stream
//! (audio + video) affect recognition system:
//!
//! - [`annotations`]: parsing and validation of per-frame multi-task labels
//!   (valence/arousal, basic expression, action units)
//! - [`labelfusion`]: cross-task label histograms, pseudo/soft label
//!   generation and contradiction filtering
//! - [`audiodsp`]: resampling, mel spectrograms and frame-aligned
//!   sub-spectrogram windows
//! - [`clipper`]: dilated 4-channel video clip assembly and augmentation
//! - [`geometry`]: 5-point similarity-transform face alignment and landmark
//!   mask rendering
//! - [`netkernels`]: forward-only factorized (2+1)D / 2D convolution stacks
//!   and the fused two-stream prediction head
//! - [`metrics`]: masked multi-task losses with analytic gradients and the
//!   competition evaluation criteria
//! - [`synth`] / [`pipeline`]: synthetic corpus generation and the
//!   deterministic end-to-end run

pub mod annotations;
pub mod audiodsp;
pub mod clipper;
pub mod error;
mod fsutil;
pub mod geometry;
pub mod labelfusion;
pub mod metrics;
pub mod netkernels;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
