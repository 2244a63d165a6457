//! Relevance-guided early crop classification.
//!
//! A small attention transformer classifies multi-band parcel timeseries.
//! Layer-wise relevance propagation attributes each logit back to every
//! (band, timestep) input, the per-timestep relevance identifies the
//! timesteps the classifier depends on, and those timesteps bound a
//! shortened classification timeframe.
//!
//! Network math is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the double-precision variants used by the CLI.

pub mod dataio;
pub mod error;
pub mod experiments;
pub mod lrp;
pub mod model;
pub mod report;
pub mod scalar;
pub mod timeframe;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision network parameters.
pub type Parameters = model::Parameters<f64>;
/// Double-precision forward trace.
pub type ForwardTrace = model::ForwardTrace<f64>;
/// Double-precision relevance map.
pub type RelevanceMap = lrp::RelevanceMap<f64>;
/// Single-precision network parameters.
pub type Parameters32 = model::Parameters<f32>;
