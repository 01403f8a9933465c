//! Core building blocks for mask-free video head swapping at desk scale:
//! media types, dual-canvas latents, motion/expression loss weighting,
//! full-reference metrics, and the paired-data pipeline.

pub mod canvas;
pub mod error;
pub mod filter;
pub mod media;
pub mod mear;
pub mod metrics;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
