//! Spectral structured-light simulation: a color-dot projector pattern,
//! a rectified camera/projector renderer, training losses with analytic
//! gradients, and per-window spectral reconstruction with a linear basis.

pub mod basis;
pub mod cli;
pub mod colorimetry;
pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod pattern;
pub mod ply;
pub mod record;
pub mod render;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
