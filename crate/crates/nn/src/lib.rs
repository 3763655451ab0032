//! Minimal tensor/backprop engine: exactly the layers, losses, optimizers
//! and schedulers the pipeline's models need, with explicit per-layer
//! backward passes verified against finite differences.
//!
//! Everything is generic over [`Real`] (`f32` for training, `f64` for
//! gradient verification); the concrete aliases live at the crate root.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use attention::{sinusoidal_pe, FeedForward, MultiHeadAttention, TransformerLayer};
pub use checkpoint::{load_checkpoint, params_fingerprint, peek_config, save_checkpoint};
pub use gencad_core::scalar::Real;
pub use gradcheck::finite_diff_check;
pub use layers::{Dropout, Embedding, LayerNorm, Linear, Mode, Relu, Tanh};
pub use loss::{cross_entropy_sum, cross_entropy_weighted, mse};
pub use optim::{clip_grad_norm, scale_grads, zero_grads, Adam, ReduceOnPlateau};
pub use tensor::{Param, Params, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(e.to_string())
    }
}

/// Training-width tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-width tensor.
pub type Tensor64 = Tensor<f64>;
