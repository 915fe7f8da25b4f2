//! Skilog: foot-pressure sensing, automatic posture labelling, boosted-tree
//! training and compiled parallel inference for ski-jump in-run biofeedback.
//!
//! The crate is organised along the data path:
//!
//! ```text
//! raw 400 kHz ADC ──signal──▶ 100 Hz frames ──signal::auto_label──▶ segments
//!        ▲                                              │
//!   dataset::synth                         dataset::make_supersamples
//!                                                       ▼
//!            compiler::flatten ◀──gbt::train◀── 150-feature super-samples
//!                   │
//!                   ▼
//!      infer::InferenceEngine (W workers) ◀──stream (14-byte frames)
//! ```
//!
//! [`energy`] holds the closed-form battery model and [`pipeline`] wires the
//! stages into the reproducible end-to-end run used by the CLI.

pub mod compiler;
pub mod config;
pub mod dataset;
pub mod energy;
mod error;
pub mod gbt;
pub mod infer;
mod label;
pub mod pipeline;
pub mod signal;
pub mod stream;

pub use error::{Error, Result};
pub use label::{Label, N_CLASSES};

/// Samples per channel in one classification block.
pub const BLOCK_LEN: usize = 50;

/// Pressure channels, in feature order: hallux, pinky, heel.
pub const N_CHANNELS: usize = 3;

/// Features in one super-sample (channel-major: 50 hallux, 50 pinky, 50 heel).
pub const N_FEATURES: usize = N_CHANNELS * BLOCK_LEN;

/// Largest value a 12-bit ADC can report.
pub const ADC_MAX: u16 = 4095;
