//! Minimal reverse-mode differentiable dense-array engine.
//!
//! Everything is a row-major 2-D matrix (`Tensor`). Operations are recorded
//! on a [`Graph`] tape; `Graph::backward` replays the tape in reverse to
//! accumulate gradients in a fixed, deterministic order. Values are computed
//! in f64; persistent weights are kept f32-representable so checkpoints
//! round-trip bit-exactly (see `ParamSet::quantize`).
//!
//! A finite-difference gradient oracle lives in [`gradcheck`].

mod error;
mod graph;
mod params;
mod tensor;

pub mod gradcheck;

pub use error::TensorError;
pub use graph::{Graph, Mask, NodeId, IGNORE_INDEX};
pub use params::ParamSet;
pub use tensor::Tensor;

/// Shorthand result type used throughout the engine.
pub type Result<T> = std::result::Result<T, TensorError>;
