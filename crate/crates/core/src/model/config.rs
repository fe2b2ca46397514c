use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MASK_ID;

/// Encoder and head hyperparameters.
///
/// The position embedding table has `max_positions + 1` rows; the extra row
/// (index `max_positions`) is the mask-position embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_size: usize,
    pub attention_dropout: f64,
    pub hidden_dropout: f64,
    pub mask_token_id: usize,
    pub mask_position_id: usize,
    pub position_loss_weight: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            max_positions: 64,
            hidden: 128,
            layers: 4,
            heads: 4,
            ffn_size: 512,
            attention_dropout: 0.1,
            hidden_dropout: 0.1,
            mask_token_id: MASK_ID,
            mask_position_id: 64,
            position_loss_weight: 1.0,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// The gradient-check model: 2 layers, hidden 16, 2 heads, 50 tokens,
    /// 8 positions.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 50,
            max_positions: 8,
            hidden: 16,
            layers: 2,
            heads: 2,
            ffn_size: 32,
            mask_position_id: 8,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "model.hidden ({}) must be a positive multiple of model.heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.vocab_size <= MASK_ID || self.mask_token_id >= self.vocab_size {
            return fail(format!(
                "model.mask_token_id {} must be below model.vocab_size {}",
                self.mask_token_id, self.vocab_size
            ));
        }
        if self.mask_position_id != self.max_positions {
            return fail(format!(
                "model.mask_position_id must equal model.max_positions ({}), got {}",
                self.max_positions, self.mask_position_id
            ));
        }
        if self.max_positions < 4 || self.ffn_size == 0 {
            return fail("model.max_positions must be ≥ 4 and model.ffn_size > 0".into());
        }
        if self.position_loss_weight.is_nan() || self.position_loss_weight < 0.0 {
            return fail(format!(
                "model.position_loss_weight must be ≥ 0, got {}",
                self.position_loss_weight
            ));
        }
        for (name, p) in [
            ("attention_dropout", self.attention_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("model.{name} must be in [0, 1), got {p}"));
            }
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 || self.init_std.is_nan() || self.init_std <= 0.0 {
            return fail("model.layer_norm_eps and model.init_std must be > 0".into());
        }
        Ok(())
    }
}
