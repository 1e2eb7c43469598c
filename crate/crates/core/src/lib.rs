//! Calibrated adaptive length discovery for masked-diffusion infilling.
//!
//! A backend reports first-step denoising confidences for a candidate mask
//! length. Their mean, divided by a fitted length-bias curve, gives a
//! calibrated score whose peak tracks the length of the missing middle. A
//! bidirectional hill climb finds that peak with a handful of probes.

pub mod backends;
pub mod bias_fit;
pub mod confidence;
pub mod formats;
pub mod harness;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod search;
pub mod types;

pub use types::*;
