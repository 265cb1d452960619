//! Cooperative perception at the detection-head level.
//!
//! Connected vehicles exchange the classification/regression maps emitted
//! by their 3D detection heads instead of full backbone feature maps or
//! final boxes. This crate provides the fusion operators (elementwise
//! max/mean, per-cell self-attention, and a learned complementary weight
//! map), the anchor encode/decode path, a bandwidth-accounted wire
//! protocol, a seeded synthetic BEV simulator with occlusion, and
//! average-precision evaluation.

pub mod error;
pub mod eval;
pub mod rng;
pub mod sim;
pub mod fusion;
pub mod geometry;
pub mod heads;
pub mod tensor;
pub mod wire;

pub use error::{CoreError, Result};
