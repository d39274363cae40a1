//! Autoregressive point-cloud generation.
//!
//! Clouds are quantized to `B` bins per axis, sorted by `(z, y, x)` and
//! modeled one coordinate at a time: each point's `z` given all earlier
//! points, then `y` given `z`, then `x` given `y` and `z`. Three branches
//! (one per coordinate) share the same layout: a point encoder, a causal
//! context operator over the encoded prefix, and a head producing `B` logits.

pub mod checkpoint;
pub mod context;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
