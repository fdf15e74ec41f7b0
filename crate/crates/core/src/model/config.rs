use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the decoder-only language model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Dropout rate, applied only while pretraining or fully fine-tuning.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    /// Whether prompt rows receive positional embeddings (positions `0..k`).
    /// When false, BOS sits at position 0 and the prompt is position-free.
    #[serde(default = "default_true")]
    pub prompt_positions: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// The default desk-scale configuration: L=4, H=4, d=64, d_ff=256, P=128.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size,
            max_positions: 128,
            dropout: 0.1,
            seed: 0,
            prompt_positions: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Positions consumed by a prompt of `k` rows, BOS and `tokens` tokens.
    pub fn positions_needed(&self, k: usize, tokens: usize) -> usize {
        if self.prompt_positions {
            k + 1 + tokens
        } else {
            1 + tokens
        }
    }

    /// Parameters in one transformer block.
    pub fn block_param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        // two layer norms, fused qkv, output projection, two ffn layers
        2 * 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d)
    }

    /// Total parameter count; the output projection is tied to the token
    /// embedding and adds nothing.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        self.vocab_size * d
            + self.max_positions * d
            + self.n_layers * self.block_param_count()
            + 2 * d
    }
}
