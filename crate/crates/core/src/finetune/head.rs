use super::data::SpanExample;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{embed_forward, encoder_forward, Bound, EncoderTrace, ForwardOptions, IGNORE_INDEX};
use crate::tensor::Real;

/// Start and end logits `[batch, seq]` from `sequence_output[batch*seq, H]`.
/// Both are independent `H → 1` projections, stored as the two columns of
/// one `[H, 2]` weight.
pub fn span_head_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    sequence_output: Var,
    batch: usize,
    seq: usize,
) -> Result<(Var, Var)> {
    let ids = bound
        .weights
        .ids
        .span_head
        .ok_or_else(|| Error::Config("model has no span head".into()))?;
    let both = bound.dense(tape, sequence_output, ids)?;
    let start = tape.select_col(both, 0)?;
    let end = tape.select_col(both, 1)?;
    Ok((tape.reshape(start, &[batch, seq])?, tape.reshape(end, &[batch, seq])?))
}

pub struct SpanForward {
    pub start_logits: Var,
    pub end_logits: Var,
    /// `(start_ce + end_ce) / 2`.
    pub loss: Var,
    pub trace: EncoderTrace,
}

/// Encoder plus span head over equal-length examples.
pub fn span_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    examples: &[&SpanExample],
    opts: &mut ForwardOptions,
) -> Result<SpanForward> {
    let b = examples.len();
    let s = examples.first().map_or(0, |e| e.seq_len());
    if let Some(i) = examples.iter().position(|e| e.seq_len() != s) {
        return Err(Error::Shape(format!(
            "span example {i} has length {}, batch uses {s}",
            examples[i].seq_len()
        )));
    }
    let input_ids: Vec<usize> = examples.iter().flat_map(|e| e.ids.iter().copied()).collect();
    let position_ids: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let emb = embed_forward(tape, bound, &input_ids, &position_ids, b, s, opts)?;
    let (seq_out, trace) = encoder_forward(tape, bound, emb, &vec![s; b], s, opts)?;
    let (start_logits, end_logits) = span_head_forward(tape, bound, seq_out, b, s)?;
    let starts: Vec<i64> = examples.iter().map(|e| e.start as i64).collect();
    let ends: Vec<i64> = examples.iter().map(|e| e.end as i64).collect();
    let ls = tape.cross_entropy(start_logits, &starts, IGNORE_INDEX)?;
    let le = tape.cross_entropy(end_logits, &ends, IGNORE_INDEX)?;
    let sum = tape.add(ls.var, le.var)?;
    let loss = tape.scale(sum, T::from_f64(0.5))?;
    Ok(SpanForward {
        start_logits,
        end_logits,
        loss,
        trace,
    })
}
