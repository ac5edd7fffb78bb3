//! Differentiable building blocks and the constellation-embedding network.

pub mod activation;
pub mod checkpoint;
pub mod dense;
pub mod embedding;
pub mod lstm;

pub use activation::{selu, Activation, SELU_ALPHA, SELU_LAMBDA};
pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use dense::DenseLayer;
pub use embedding::{init_model, EmbeddingModel, ForwardCache, Gradients, Parameters, TensorRef, EMBEDDING_DIM};
pub use lstm::{bilstm_forward, BiLstm, BiLstmLayer, LstmDirection};

use crate::error::Result;

/// `activation(W·x + b)` for a single input vector.
pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward_vec(x)
}
