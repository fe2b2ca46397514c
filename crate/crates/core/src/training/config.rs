use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskingConfig;

/// Pretraining objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Token masking only; no position head, λ = 0.
    Baseline,
    /// Token masking plus position masking and the position head.
    Position,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Position => "position",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "position" | "position-masking" => Ok(Mode::Position),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected baseline or position)"
            ))),
        }
    }
}

/// One pretraining phase. `steps` overrides the share derived from
/// [`TrainConfig::total_steps`] and [`TrainConfig::phase1_fraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub seq_len: usize,
    pub steps: Option<u64>,
    pub batch_size: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            seq_len: 32,
            steps: None,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    pub phase1_fraction: f64,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub momentum: f64,
    /// Serialized separately as its own config group.
    #[serde(skip)]
    pub masking: MaskingConfig,
    /// Evaluate every this many steps, and always after the last step.
    pub eval_every: u64,
    /// Number of held-out batches per evaluation.
    pub eval_batches: usize,
    /// Emit an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    /// Record elapsed seconds in metrics. Off by default so that metrics
    /// files are byte-identical across reruns.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 2000,
            phase1_fraction: 0.9,
            phase1: PhaseConfig::default(),
            phase2: PhaseConfig {
                seq_len: 64,
                ..PhaseConfig::default()
            },
            lr_peak: 0.08,
            warmup_steps: 100,
            momentum: 0.9,
            masking: MaskingConfig::default(),
            eval_every: 100,
            eval_batches: 8,
            checkpoint_every: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Step budgets of the two phases.
    pub fn phase_steps(&self) -> (u64, u64) {
        let p1 = self
            .phase1
            .steps
            .unwrap_or_else(|| (self.total_steps as f64 * self.phase1_fraction).round() as u64);
        let p2 = self
            .phase2
            .steps
            .unwrap_or_else(|| self.total_steps.saturating_sub(p1));
        (p1, p2)
    }

    pub fn total(&self) -> u64 {
        let (a, b) = self.phase_steps();
        a + b
    }

    /// Phase (1 or 2) that runs the update with zero-based index `step`.
    pub fn phase_of(&self, step: u64) -> u8 {
        if step < self.phase_steps().0 {
            1
        } else {
            2
        }
    }

    pub fn phase(&self, phase: u8) -> &PhaseConfig {
        if phase == 1 {
            &self.phase1
        } else {
            &self.phase2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.masking.validate()?;
        if self.phase2.seq_len < self.phase1.seq_len {
            return fail(format!(
                "train.phase2.seq_len ({}) must be ≥ train.phase1.seq_len ({})",
                self.phase2.seq_len, self.phase1.seq_len
            ));
        }
        if self.phase1.seq_len < 4 {
            return fail("train.phase1.seq_len must be at least 4".into());
        }
        if self.phase1.batch_size == 0 || self.phase2.batch_size == 0 {
            return fail("train.phase*.batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) {
            return fail(format!(
                "train.phase1_fraction must be in [0, 1], got {}",
                self.phase1_fraction
            ));
        }
        if !self.lr_peak.is_finite() || self.lr_peak < 0.0 {
            return fail(format!("train.lr_peak must be ≥ 0, got {}", self.lr_peak));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("train.momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.eval_every == 0 || self.eval_batches == 0 {
            return fail("train.eval_every and train.eval_batches must be positive".into());
        }
        Ok(())
    }
}
