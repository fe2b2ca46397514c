use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::examples::Example;
use super::vocab::{is_special, FIRST_WORD_ID, MASK_ID};
use crate::error::{Error, Result};

/// Per-slot corruption probabilities for token ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSplit {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for TokenSplit {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

/// Per-slot corruption probabilities for position ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSplit {
    pub mask: f64,
    pub keep: f64,
    pub random: f64,
}

impl Default for PositionSplit {
    fn default() -> Self {
        Self {
            mask: 0.90,
            keep: 0.05,
            random: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotAlignment {
    /// Token and position slots are drawn separately.
    #[default]
    Independent,
    /// Position masking reuses the token slots.
    SameSlots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub token_mask_pct: f64,
    pub token_split: TokenSplit,
    pub position_mask_pct: f64,
    pub position_split: PositionSplit,
    pub alignment: SlotAlignment,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            token_mask_pct: 0.15,
            token_split: TokenSplit::default(),
            position_mask_pct: 0.10,
            position_split: PositionSplit::default(),
            alignment: SlotAlignment::Independent,
        }
    }
}

fn check_split(name: &str, parts: [f64; 3]) -> Result<()> {
    if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "masking.{name} must be probabilities summing to 1, got {parts:?}"
        )));
    }
    Ok(())
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("token_mask_pct", self.token_mask_pct),
            ("position_mask_pct", self.position_mask_pct),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("masking.{name} must be in [0, 1], got {v}")));
            }
        }
        let t = self.token_split;
        check_split("token_split", [t.mask, t.random, t.keep])?;
        let p = self.position_split;
        check_split("position_split", [p.mask, p.keep, p.random])
    }

    /// Same config with position masking switched off.
    pub fn baseline(&self) -> Self {
        Self {
            position_mask_pct: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenBranch {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionBranch {
    Mask,
    Keep,
    Random,
}

/// Half-up rounding of `pct · body_len`, at least one slot when `pct > 0`.
pub fn mask_slot_count(body_len: usize, pct: f64) -> usize {
    if pct <= 0.0 || body_len == 0 {
        return 0;
    }
    let n = (pct * body_len as f64 + 0.5).floor() as usize;
    n.clamp(1, body_len)
}

/// Draws `mask_slot_count` distinct body slots uniformly, sorted ascending.
/// Body slots holding a special id (such as `[UNK]`) are never eligible.
pub fn select_mask_slots<R: Rng + ?Sized>(example: &Example, pct: f64, rng: &mut R) -> Vec<usize> {
    let eligible: Vec<usize> = example.body_slots().filter(|&j| !is_special(example.ids[j])).collect();
    let k = mask_slot_count(eligible.len(), pct);
    if k == 0 {
        return Vec::new();
    }
    let mut slots: Vec<usize> = sample(rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect();
    slots.sort_unstable();
    slots
}

pub fn draw_token_branch<R: Rng + ?Sized>(split: &TokenSplit, rng: &mut R) -> TokenBranch {
    let u: f64 = rng.random();
    if u < split.mask {
        TokenBranch::Mask
    } else if u < split.mask + split.random {
        TokenBranch::Random
    } else {
        TokenBranch::Keep
    }
}

pub fn draw_position_branch<R: Rng + ?Sized>(split: &PositionSplit, rng: &mut R) -> PositionBranch {
    let u: f64 = rng.random();
    if u < split.mask {
        PositionBranch::Mask
    } else if u < split.mask + split.keep {
        PositionBranch::Keep
    } else {
        PositionBranch::Random
    }
}

/// Corrupted token ids plus what was done to each slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMasking {
    pub input_ids: Vec<usize>,
    /// Original id of each slot, in slot order.
    pub labels: Vec<usize>,
    pub branches: Vec<TokenBranch>,
}

/// Applies the mask / random / keep corruption to `slots`. Random
/// replacements are drawn uniformly from the non-reserved ids.
pub fn apply_token_mask<R: Rng + ?Sized>(
    example: &Example,
    slots: &[usize],
    split: &TokenSplit,
    vocab_size: usize,
    rng: &mut R,
) -> TokenMasking {
    let mut input_ids = example.ids.clone();
    let mut labels = Vec::with_capacity(slots.len());
    let mut branches = Vec::with_capacity(slots.len());
    for &s in slots {
        labels.push(example.ids[s]);
        let branch = draw_token_branch(split, rng);
        match branch {
            TokenBranch::Mask => input_ids[s] = MASK_ID,
            TokenBranch::Random => input_ids[s] = rng.random_range(FIRST_WORD_ID..vocab_size),
            TokenBranch::Keep => {}
        }
        branches.push(branch);
    }
    TokenMasking {
        input_ids,
        labels,
        branches,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionMasking {
    pub position_ids: Vec<usize>,
    /// True in-sequence index of each slot.
    pub labels: Vec<usize>,
    pub branches: Vec<PositionBranch>,
}

/// Starts from identity positions and corrupts `slots`: the mask branch
/// writes `mask_position_id`, the random branch a uniform index inside the
/// non-pad part of the sequence.
pub fn apply_position_mask<R: Rng + ?Sized>(
    example: &Example,
    slots: &[usize],
    split: &PositionSplit,
    mask_position_id: usize,
    rng: &mut R,
) -> PositionMasking {
    let mut position_ids: Vec<usize> = (0..example.seq_len()).collect();
    let mut labels = Vec::with_capacity(slots.len());
    let mut branches = Vec::with_capacity(slots.len());
    for &s in slots {
        labels.push(s);
        let branch = draw_position_branch(split, rng);
        match branch {
            PositionBranch::Mask => position_ids[s] = mask_position_id,
            PositionBranch::Keep => {}
            PositionBranch::Random => position_ids[s] = rng.random_range(0..example.valid_len),
        }
        branches.push(branch);
    }
    PositionMasking {
        position_ids,
        labels,
        branches,
    }
}
