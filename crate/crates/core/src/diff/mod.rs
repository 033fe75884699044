//! Reverse-mode differentiation over dense f64 tensors and the learnable
//! blocks built on it.

pub mod checkpoint;
mod graph;
mod gru;
mod gumbel;
mod mlp;
mod params;
mod rng;
mod tensor;

pub use graph::{Graph, Var};
pub use gru::GruCell;
pub use gumbel::gumbel_softmax;
pub use mlp::{Activation, MlpBlock};
pub use params::{ParamId, ParamStore};
pub use rng::RngStream;
pub use tensor::Tensor;
