//! Toy latent video diffusion over dual canvases.
//!
//! Frames are encoded by a fixed orthonormal patch projection
//! ([`codec::PatchCodec`]). The denoiser ([`model::Denoiser`]) is a small
//! per-frame U-Net with attention along the frame axis, trained to predict
//! the noise on the motion canvas while the identity canvas stays clean
//! ([`train`]). Sampling ([`sample`]) runs deterministic DDIM updates and
//! re-clamps the identity canvas after every step.

pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod model;
pub mod optim;
pub mod sample;
pub mod schedule;
pub mod train;

pub use codec::PatchCodec;
pub use error::{Error, Result};
pub use model::{Denoiser, DenoiserConfig};
pub use schedule::NoiseSchedule;
