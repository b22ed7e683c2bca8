//! Radar cadence analysis and dual-stream attention networks, without `std`.
//!
//! The crate turns magnitude-only multi-antenna range-time maps into cadence
//! velocity diagrams, generates synthetic gesture data with known ground
//! truth, applies radar-specific augmentations, and trains a small dual-stream
//! network with cross-antenna attention and asymmetric cross-attention fusion
//! on top of a hand-rolled reverse-mode autodiff tape. Evaluation statistics
//! (corrected paired t-test, effect size, confusion matrices) live in [`stats`].
//!
//! Everything here is pure computation over `alloc` collections. File formats,
//! the command-line tool and all IO live in the `cadence-forge` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ablation;
pub mod augment;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod rtm;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use rtm::{PreprocessConfig, RangeTimeMap};
pub use spectral::{CadenceVelocityDiagram, CvdConfig, WindowKind};
