//! Stage-wise adaptive label distribution learning for ordinal labels.
//!
//! Targets are discretised Gaussians over an integer label support. The
//! support is split into stages (exact 1-D k-means or ten-label bins), and
//! each stage carries its own target width σ and its own weight α between
//! the distribution (KL) and classification (cross-entropy) losses. Both are
//! tuned by a validation-gated outer loop around plain SGD training of a
//! small feed-forward classifier.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod ldl;
pub mod model;
pub mod staging;
pub mod trainer;

pub use error::{Error, Result};
