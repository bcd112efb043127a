//! Consistency mechanisms for multi-shot video diffusion at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: latent grids, seeded per-frame Gaussian streams and the
//!   `.dcdn` binary format.
//! - [`camera`]: motion categories, planar homographies and warp fields.
//! - [`noise`]: warped, variance-preserving noise propagation used as the
//!   sampler's initial latent.
//! - [`prompt`]: prompt extension (HTTP endpoint or offline template),
//!   rule-based camera-motion classification and a toy text embedder.
//! - [`attention`]: sparse inter-shot self-attention, windowed
//!   cross-attention, a masked dense oracle and pair counting.
//! - [`diffusion`]: schedule, a tiny transformer denoiser with hand-written
//!   backward pass, training loop, DDIM sampler and motion evaluation.

pub mod attention;
pub mod camera;
pub mod diffusion;
mod error;
pub mod noise;
pub mod prompt;
pub mod tensor;

pub use error::{Error, ErrorCategory, Result};
