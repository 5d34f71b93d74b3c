//! Reverse-mode differentiation over dense `f64` matrices and the Adam optimizer.

mod graph;
mod params;
mod tensor;

pub use graph::{Graph, Var, MASK_NEG};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;
