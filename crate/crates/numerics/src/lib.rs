//! Minimal deterministic tensor library: dense tensors, a tape-based
//! reverse-mode autodiff graph with the convolution/sampling primitives the
//! flow predictor and policy networks need, Adam, and a seeded PRNG.

mod adam;
mod error;
mod graph;
mod ops;
mod params;
mod real;
mod rng;
mod tensor;

pub use adam::AdamState;
pub use error::{NumericsError, Result};
pub use graph::{Graph, Var};
pub use params::{he_normal, ParamId, ParamStore};
pub use real::{matmul, Real};
pub use rng::Rng;
pub use tensor::Tensor;
