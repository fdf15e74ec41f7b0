//! Dense linear algebra, transformer primitives and reverse-mode gradients.

mod graph;
mod matrix;
pub mod ops;
mod scalar;

pub use graph::{Gradients, Graph, NodeId, ParamKey};
pub use matrix::Matrix;
pub use ops::{causal_attention, cross_entropy, layer_norm, log_softmax, softmax};
pub use scalar::{Precision, Scalar};
