//! Minimal reverse-mode automatic differentiation for the small dense models
//! used in this workspace. Everything is `f64` and single-threaded so that a
//! forward/backward pass is bit-reproducible.

pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;

pub use graph::{sigmoid, Graph, Matrix, Var, PAD};
pub use nn::{AttentionOutput, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, Param, ParamId, ParamStore};
