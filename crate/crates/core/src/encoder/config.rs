use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the encoder.
///
/// `window` is the total span of the local attention window: position `i`
/// sees keys `j` with `|i - j| <= window / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_len: usize,
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub intermediate_dim: usize,
    pub num_heads: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub dropout: f32,
    /// Global-attention rows reuse the local Q/K/V projections.
    pub tie_global_projections: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl EncoderConfig {
    /// Laptop-sized model used for tests and the end-to-end smoke runs.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            input_len: 128,
            num_blocks: 2,
            hidden_dim: 64,
            intermediate_dim: 128,
            num_heads: 2,
            window: 16,
            embed_dim: 32,
            vocab_size,
            dropout: 0.1,
            tie_global_projections: false,
        }
    }

    /// 4096-token input, 8 blocks, 2048 intermediate, 512 window, 128-d output.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            input_len: 4096,
            num_blocks: 8,
            hidden_dim: 768,
            intermediate_dim: 2048,
            num_heads: 12,
            window: 512,
            embed_dim: 128,
            vocab_size,
            dropout: 0.1,
            tie_global_projections: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_len", self.input_len),
            ("num_blocks", self.num_blocks),
            ("hidden_dim", self.hidden_dim),
            ("intermediate_dim", self.intermediate_dim),
            ("num_heads", self.num_heads),
            ("window", self.window),
            ("embed_dim", self.embed_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("window {} must be even", self.window)));
        }
        if self.window > self.input_len {
            return Err(Error::Config(format!(
                "window {} exceeds input_len {}",
                self.window, self.input_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
