//! Speech-aware 3D face reconstruction toolkit.
//!
//! The crate fits a linear morphable face model with articulated jaw to
//! talking-head video by optimizing expression and jaw-pose parameters
//! (directly, or through a trainable sequence encoder) under perceptual
//! feature-matching losses computed on differentiably rendered mouth
//! crops, with relaxed landmark constraints keeping the rest of the face
//! in place. It also ships the matching evaluation side: lipreading
//! error metrics (CER/WER and their viseme variants) and the exact
//! binomial statistics used to analyze preference studies.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
