//! Speaker-aware speech transformer.
//!
//! A Speech-Transformer encoder/decoder whose decoder additionally sees a
//! soft speaker embedding: a multi-head attention from encoder states over a
//! static bank of speaker vectors. Everything here is `f64` and CPU-only,
//! sized for desk-scale synthetic experiments.

pub mod attention;
pub mod data;
pub mod decoding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numerics;
pub mod params;
pub mod speaker;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
