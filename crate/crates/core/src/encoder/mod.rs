//! Long-context embedding model.

mod attention;
mod checkpoint;
mod config;
mod model;
mod params;
mod tensor;

use serde::{Deserialize, Serialize};

pub use attention::{
    attention_backward, attention_forward, sliding_window_attention, AttentionCache, AttentionShape,
    Qkv, QkvGrad,
};
pub use checkpoint::{fingerprint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::EncoderConfig;
pub use model::{Encoder, ForwardCache};
pub use params::{Block, LayerNorm, Linear, Parameters, Projections};
pub use tensor::Tensor;

/// Unit-L2-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`; a zero vector stays zero.
    pub fn new(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self(values)
    }

    /// Wraps values that are already unit norm.
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Cosine similarity of unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f32 {
    debug_assert_eq!(a.dim(), b.dim());
    tensor::dot(&a.0, &b.0).clamp(-1.0, 1.0)
}
