use crate::autograd::Tape;
use crate::error::Result;
use crate::masking::MaskedBatch;
use crate::model::{argmax_rows, pretrain_forward, ForwardOptions, Losses, ModelWeights};
use crate::tensor::{Real, Tensor};

/// Held-out metrics over a set of batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mlm_accuracy: f64,
    pub pos_accuracy: f64,
    /// Slot-weighted mean losses; `total = mlm + λ·pos`.
    pub losses: Losses,
    pub mlm_slots: usize,
    pub pos_slots: usize,
}

/// Number of rows whose argmax (lowest index on ties) equals the label.
pub fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs every batch with dropout off and pools slot-level accuracy. Position
/// accuracy and loss are 0 when there are no position slots or no position
/// head.
pub fn evaluate<T: Real>(weights: &ModelWeights<T>, batches: &[MaskedBatch]) -> Result<EvalResult> {
    let (mut mlm_ok, mut mlm_n, mut pos_ok, mut pos_n) = (0, 0, 0, 0);
    let (mut mlm_sum, mut pos_sum) = (0.0, 0.0);
    for batch in batches {
        let mut tape = Tape::new();
        let out = pretrain_forward(&mut tape, weights, batch, &mut ForwardOptions::eval())?;
        let m = batch.token_labels.len();
        mlm_ok += count_correct(tape.value(out.mlm_logits), &batch.token_labels);
        mlm_n += m;
        mlm_sum += out.losses.mlm * m as f64;
        if let Some(pl) = out.pos_logits {
            let mp = batch.position_labels.len();
            pos_ok += count_correct(tape.value(pl), &batch.position_labels);
            pos_n += mp;
            pos_sum += out.losses.pos * mp as f64;
        }
    }
    let mlm = if mlm_n == 0 { 0.0 } else { mlm_sum / mlm_n as f64 };
    let pos = if pos_n == 0 { 0.0 } else { pos_sum / pos_n as f64 };
    let lambda = if weights.ids.position_head.is_some() {
        weights.config.position_loss_weight
    } else {
        0.0
    };
    Ok(EvalResult {
        mlm_accuracy: ratio(mlm_ok, mlm_n),
        pos_accuracy: ratio(pos_ok, pos_n),
        losses: Losses {
            mlm,
            pos,
            total: mlm + lambda * pos,
        },
        mlm_slots: mlm_n,
        pos_slots: pos_n,
    })
}
