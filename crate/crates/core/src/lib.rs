//! Multi-task facial affect training with semi-supervised expression learning.
//!
//! A shared backbone feeds three heads: valence/arousal regression, 8-way
//! expression classification and 12-unit action-unit detection. Labels may be
//! missing per task (sentinel-encoded in manifests). Samples without an
//! expression label are used through pseudo-labels gated by adaptive per-class
//! confidence thresholds, and through a symmetric KL consistency term between
//! weak and strong augmented views.
//!
//! Everything is deterministic given a seed, including under parallel
//! execution.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod pseudo_label;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Number of expression classes (six basic, neutral, other).
pub const NUM_EXPRESSIONS: usize = 8;
/// Number of action units: AU1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26.
pub const NUM_AUS: usize = 12;
/// Action-unit identifiers in manifest column order.
pub const AU_IDS: [u32; NUM_AUS] = [1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26];
