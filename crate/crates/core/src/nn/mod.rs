//! Dense tensors with a reverse-mode autodiff tape.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters live
//! in a [`ParamStore`] outside the graph: the graph copies their values in on
//! first use and [`Graph::backward`] adds their gradients back into the store.
//! Everything is generic over [`Scalar`] so the same layers run in `f32` for
//! training and `f64` for gradient checking.

mod backward;
mod graph;
pub mod layers;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use graph::{Graph, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
#[cfg(test)]
mod gradcheck;
