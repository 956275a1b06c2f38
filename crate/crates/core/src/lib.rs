//! Calibration and high-resolution multipath estimation for phased-array
//! channel sounders.
//!
//! The crate models a uniform rectangular array with phase-shifter beam
//! ports, turns sampled beam patterns into Fourier-series (EADF) models,
//! synthesizes wideband MIMO observations, injects calibration impairments,
//! solves the two-step calibration problem and estimates specular paths.

pub mod array;
pub mod calib;
pub mod config;
pub mod eadf;
pub mod error;
pub mod estimator;
pub mod impairments;
pub mod scenario;
pub mod lm;
pub mod synth;
pub mod tables;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64;
