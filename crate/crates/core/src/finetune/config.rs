use serde::{Deserialize, Serialize};

use crate::autograd::DropoutMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Backward rule at the attention-probability dropout site.
    pub dropout_gradient_mode: DropoutMode,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub seq_len: usize,
    /// Overrides the checkpoint's attention dropout rate when set.
    pub attention_dropout: Option<f64>,
    /// Examples in the softmax-gradient probe batch.
    pub probe_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 16,
            lr: 0.02,
            momentum: 0.9,
            dropout_gradient_mode: DropoutMode::Standard,
            seed: 0,
            train_size: 2000,
            dev_size: 500,
            seq_len: 32,
            attention_dropout: None,
            probe_size: 16,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.train_size == 0 || self.dev_size == 0 || self.probe_size == 0 {
            return fail("finetune.train_size, dev_size and probe_size must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("finetune.batch_size must be positive".into());
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return fail(format!("finetune.lr must be ≥ 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("finetune.momentum must be in [0, 1), got {}", self.momentum));
        }
        if let Some(p) = self.attention_dropout {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("finetune.attention_dropout must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}
