use super::examples::Example;
use super::mask::{
    apply_position_mask, apply_token_mask, select_mask_slots, MaskingConfig, PositionBranch,
    SlotAlignment, TokenBranch,
};
use super::vocab::is_special;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Which random streams a batch draws its masking from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskStreams {
    pub seed: u64,
    pub token: Stream,
    pub position: Stream,
    pub index: u64,
}

impl MaskStreams {
    pub fn train(seed: u64, step: u64) -> Self {
        Self {
            seed,
            token: Stream::TokenMask,
            position: Stream::PositionMask,
            index: step,
        }
    }

    pub fn eval(seed: u64, index: u64) -> Self {
        Self {
            seed,
            token: Stream::EvalTokenMask,
            position: Stream::EvalPositionMask,
            index,
        }
    }
}

/// A packed, masked training batch. Flattened arrays are `[batch, seq]`
/// row-major; slots are `(row, column)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub input_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub valid_lens: Vec<usize>,
    pub token_slots: Vec<(usize, usize)>,
    pub token_labels: Vec<usize>,
    pub position_slots: Vec<(usize, usize)>,
    pub position_labels: Vec<usize>,
    pub token_branches: Vec<TokenBranch>,
    pub position_branches: Vec<PositionBranch>,
    pub seed: u64,
}

impl MaskedBatch {
    pub fn num_tokens(&self) -> usize {
        self.batch_size * self.seq_len
    }

    /// Checks every batch invariant against the source examples.
    pub fn validate(&self, examples: &[Example], mask_position_id: usize) -> Result<()> {
        let s = self.seq_len;
        let fail = |index: usize, reason: String| Err(Error::Assembly { index, reason });
        if examples.len() != self.batch_size {
            return fail(0, format!("{} examples for batch of {}", examples.len(), self.batch_size));
        }
        if self.token_slots.len() != self.token_labels.len()
            || self.position_slots.len() != self.position_labels.len()
        {
            return fail(0, "slot/label count mismatch".into());
        }
        let mut token_masked = vec![false; self.num_tokens()];
        for (&(b, j), &label) in self.token_slots.iter().zip(&self.token_labels) {
            let ex = &examples[b];
            if is_special(ex.ids[j]) {
                return fail(b, format!("token slot {j} targets a special token"));
            }
            if label != ex.ids[j] {
                return fail(b, format!("token label at slot {j} is {label}, original {}", ex.ids[j]));
            }
            token_masked[b * s + j] = true;
        }
        let mut pos_masked = vec![false; self.num_tokens()];
        for (&(b, j), &label) in self.position_slots.iter().zip(&self.position_labels) {
            let ex = &examples[b];
            if is_special(ex.ids[j]) {
                return fail(b, format!("position slot {j} targets a special token"));
            }
            if label != j {
                return fail(b, format!("position label at slot {j} is {label}"));
            }
            let p = self.position_ids[b * s + j];
            if p != mask_position_id && p >= ex.valid_len {
                return fail(b, format!("position id {p} at slot {j} points past the sequence"));
            }
            pos_masked[b * s + j] = true;
        }
        for (b, ex) in examples.iter().enumerate() {
            if ex.ids.len() != s {
                return fail(b, format!("example length {} != {s}", ex.ids.len()));
            }
            for j in 0..s {
                let k = b * s + j;
                if !token_masked[k] && self.input_ids[k] != ex.ids[j] {
                    return fail(b, format!("unmasked slot {j} has altered token id"));
                }
                if !pos_masked[k] && self.position_ids[k] != j {
                    return fail(b, format!("unmasked slot {j} has altered position id"));
                }
            }
        }
        Ok(())
    }

    /// Undoes token corruption using the stored labels.
    pub fn reconstruct_ids(&self) -> Vec<usize> {
        let mut ids = self.input_ids.clone();
        for (&(b, j), &l) in self.token_slots.iter().zip(&self.token_labels) {
            ids[b * self.seq_len + j] = l;
        }
        ids
    }

    /// Undoes position corruption using the stored labels.
    pub fn reconstruct_positions(&self) -> Vec<usize> {
        let mut pos = self.position_ids.clone();
        for (&(b, j), &l) in self.position_slots.iter().zip(&self.position_labels) {
            pos[b * self.seq_len + j] = l;
        }
        pos
    }
}

/// Masks `examples` into one batch. A pure function of its arguments.
pub fn assemble_batch(
    examples: &[Example],
    config: &MaskingConfig,
    vocab_size: usize,
    mask_position_id: usize,
    streams: MaskStreams,
) -> Result<MaskedBatch> {
    config.validate()?;
    let seq_len = examples.first().map_or(0, Example::seq_len);
    if let Some(i) = examples.iter().position(|e| e.seq_len() != seq_len) {
        return Err(Error::Assembly {
            index: i,
            reason: format!("length {} differs from {seq_len}", examples[i].seq_len()),
        });
    }
    if mask_position_id < seq_len {
        return Err(Error::Config(format!(
            "mask position id {mask_position_id} collides with sequence length {seq_len}"
        )));
    }
    let mut token_rng = stream_rng(streams.seed, streams.token, streams.index);
    let mut pos_rng = stream_rng(streams.seed, streams.position, streams.index);

    let mut batch = MaskedBatch {
        batch_size: examples.len(),
        seq_len,
        input_ids: Vec::with_capacity(examples.len() * seq_len),
        position_ids: Vec::with_capacity(examples.len() * seq_len),
        valid_lens: Vec::with_capacity(examples.len()),
        token_slots: Vec::new(),
        token_labels: Vec::new(),
        position_slots: Vec::new(),
        position_labels: Vec::new(),
        token_branches: Vec::new(),
        position_branches: Vec::new(),
        seed: streams.seed,
    };
    for (b, ex) in examples.iter().enumerate() {
        let tslots = select_mask_slots(ex, config.token_mask_pct, &mut token_rng);
        let tm = apply_token_mask(ex, &tslots, &config.token_split, vocab_size, &mut token_rng);

        let pslots = if config.position_mask_pct <= 0.0 {
            Vec::new()
        } else {
            match config.alignment {
                SlotAlignment::Independent => {
                    select_mask_slots(ex, config.position_mask_pct, &mut pos_rng)
                }
                SlotAlignment::SameSlots => tslots.clone(),
            }
        };
        let pm = apply_position_mask(ex, &pslots, &config.position_split, mask_position_id, &mut pos_rng);

        batch.input_ids.extend_from_slice(&tm.input_ids);
        batch.position_ids.extend_from_slice(&pm.position_ids);
        batch.valid_lens.push(ex.valid_len);
        batch.token_slots.extend(tslots.iter().map(|&j| (b, j)));
        batch.token_labels.extend(tm.labels);
        batch.token_branches.extend(tm.branches);
        batch.position_slots.extend(pslots.iter().map(|&j| (b, j)));
        batch.position_labels.extend(pm.labels);
        batch.position_branches.extend(pm.branches);
    }
    batch.validate(examples, mask_position_id)?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::examples::make_examples;

    fn examples(n: usize, seq: usize) -> Vec<Example> {
        let stream: Vec<usize> = (0..n * (seq - 2) - 3).map(|i| 5 + (i * 7) % 40).collect();
        make_examples(&stream, seq).unwrap()
    }

    #[test]
    fn baseline_batch_has_no_position_slots() {
        let ex = examples(4, 16);
        let cfg = MaskingConfig::default().baseline();
        let b = assemble_batch(&ex, &cfg, 50, 16, MaskStreams::train(0, 0)).unwrap();
        assert!(b.position_slots.is_empty());
        assert!(!b.token_slots.is_empty());
        for r in 0..4 {
            assert_eq!(&b.position_ids[r * 16..(r + 1) * 16], &(0..16).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn same_slots_mode() {
        let ex = examples(4, 16);
        let cfg = MaskingConfig {
            alignment: SlotAlignment::SameSlots,
            ..MaskingConfig::default()
        };
        let b = assemble_batch(&ex, &cfg, 50, 16, MaskStreams::train(0, 0)).unwrap();
        assert_eq!(b.position_slots, b.token_slots);
    }

    #[test]
    fn deterministic_replay_and_reconstruction() {
        let ex = examples(6, 20);
        let cfg = MaskingConfig::default();
        let a = assemble_batch(&ex, &cfg, 50, 32, MaskStreams::train(11, 5)).unwrap();
        let b = assemble_batch(&ex, &cfg, 50, 32, MaskStreams::train(11, 5)).unwrap();
        assert_eq!(a, b);
        let c = assemble_batch(&ex, &cfg, 50, 32, MaskStreams::train(11, 6)).unwrap();
        assert_ne!(a, c);
        let orig: Vec<usize> = ex.iter().flat_map(|e| e.ids.iter().copied()).collect();
        assert_eq!(a.reconstruct_ids(), orig);
        let ident: Vec<usize> = (0..6).flat_map(|_| 0..20).collect();
        assert_eq!(a.reconstruct_positions(), ident);
    }

    #[test]
    fn position_masking_does_not_perturb_token_stream() {
        let ex = examples(5, 16);
        let cfg = MaskingConfig::default();
        let with = assemble_batch(&ex, &cfg, 50, 16, MaskStreams::train(3, 1)).unwrap();
        let without = assemble_batch(&ex, &cfg.baseline(), 50, 16, MaskStreams::train(3, 1)).unwrap();
        assert_eq!(with.input_ids, without.input_ids);
        assert_eq!(with.token_slots, without.token_slots);
    }

    #[test]
    fn mismatched_lengths_name_the_example() {
        let mut ex = examples(3, 16);
        ex.extend(examples(1, 12));
        let err = assemble_batch(&ex, &MaskingConfig::default(), 50, 16, MaskStreams::train(0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::Assembly { index: 3, .. }), "{err}");
    }

    #[test]
    fn validate_catches_tampering() {
        let ex = examples(2, 16);
        let mut b = assemble_batch(&ex, &MaskingConfig::default(), 50, 16, MaskStreams::train(0, 0))
            .unwrap();
        b.input_ids[16] = 4; // [CLS] of row 1 overwritten
        assert!(matches!(b.validate(&ex, 16), Err(Error::Assembly { index: 1, .. })));
    }
}
