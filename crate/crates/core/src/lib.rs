//! Noise-entropy features for telling camera images from generated ones.
//!
//! The detection pipeline is `nlm` (denoise, take the residual) followed by
//! `entropy` (resize the residual and compute block-wise Shannon entropy).
//! `classifier` and `eval` train and score a linear model on those tensors.
//! `datatools`, `promptgen` and `synth` cover dataset construction.

pub mod classifier;
pub mod datatools;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod imagecore;
pub mod label;
pub mod nlm;
pub mod promptgen;
pub mod synth;

pub use error::{Error, Result};
pub use label::Label;
