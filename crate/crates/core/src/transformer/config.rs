use serde::{Deserialize, Serialize};

use super::TransformerError;

fn default_tied() -> bool {
    true
}

/// Architecture hyperparameters.
///
/// `d_mlp == 0` builds an attention-only model (no MLP and no second layer
/// norm in each block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub ctx_len: usize,
    /// Multiplier `c` applied to the learned positional embedding before it
    /// is added to the token embedding.
    pub pos_scale: f64,
    #[serde(default = "default_tied")]
    pub tied_embeddings: bool,
}

impl ModelConfig {
    pub fn gpt2_small() -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_mlp: 3072,
            vocab_size: 50257,
            ctx_len: 1024,
            pos_scale: 1.0,
            tied_embeddings: true,
        }
    }

    pub fn gpt2_medium() -> Self {
        Self {
            n_layers: 24,
            n_heads: 16,
            d_model: 1024,
            d_mlp: 4096,
            ..Self::gpt2_small()
        }
    }

    /// Two-layer, four-head attention-only model used for emergence runs.
    pub fn toy_induction() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_mlp: 0,
            vocab_size: 128,
            ctx_len: 128,
            pos_scale: 1.0,
            tied_embeddings: true,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn has_mlp(&self) -> bool {
        self.d_mlp > 0
    }

    pub fn n_heads_total(&self) -> usize {
        self.n_layers * self.n_heads
    }

    pub fn validate(&self) -> Result<(), TransformerError> {
        let bad = |msg: String| Err(TransformerError::InvalidConfig(msg));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.vocab_size == 0 {
            return bad("layer, head, width and vocabulary counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.ctx_len < 2 {
            return bad(format!("ctx_len must be at least 2, got {}", self.ctx_len));
        }
        if !(self.pos_scale.is_finite() && self.pos_scale >= 0.0) {
            return bad(format!("pos_scale must be finite and >= 0, got {}", self.pos_scale));
        }
        Ok(())
    }
}
