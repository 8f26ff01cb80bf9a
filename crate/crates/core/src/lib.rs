//! Simulation and estimation pipeline for pulsed homodyne measurements of
//! thermally driven mechanical modes read out through a nonlinear
//! optomechanical cavity.
//!
//! Module map:
//! - [`params`]: physical parameters and derived scalars (`beta`, `chi`, widths)
//! - [`mechsim`]: thermal sampling and Ornstein-Uhlenbeck dephasing
//! - [`transduce`]: displacement to noisy homodyne samples
//! - [`calibrate`]: thermal-histogram model and detector calibration fit
//! - [`condition`]: pulse sequence, post-selection, conditional variances
//! - [`tomography`]: marginals, filtered back-projection, FWHM contours
//! - [`runner`]: experiment configs and the command implementations

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod condition;
pub mod error;
pub mod lsq;
pub mod mechsim;
pub mod params;
pub mod runner;
pub mod stats;
pub mod tomography;
pub mod transduce;

pub use error::{Error, Result};
