use super::weights::{DenseIds, ModelWeights};
use crate::autograd::{DropoutMode, LossVar, ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::masking::MaskedBatch;
use crate::rng::{stream_rng, Rng, Stream};
use crate::tensor::{Real, Tensor};

/// Ignore index for cross-entropy targets.
pub const IGNORE_INDEX: i64 = -100;

/// Dropout behaviour of one forward pass.
pub struct ForwardOptions {
    pub training: bool,
    /// Backward rule at the attention-probability dropout site. Every other
    /// dropout site always uses [`DropoutMode::Standard`].
    pub attn_dropout_mode: DropoutMode,
    pub rng: Rng,
}

impl ForwardOptions {
    /// Dropout off.
    pub fn eval() -> Self {
        Self {
            training: false,
            attn_dropout_mode: DropoutMode::Standard,
            rng: stream_rng(0, Stream::Dropout, 0),
        }
    }

    pub fn train(rng: Rng, attn_dropout_mode: DropoutMode) -> Self {
        Self {
            training: true,
            attn_dropout_mode,
            rng,
        }
    }
}

/// Lazily places parameters on a tape, at most once each, so shared weights
/// (the tied token embedding) accumulate gradient from every use.
pub struct Bound<'w, T: Real> {
    pub weights: &'w ModelWeights<T>,
    vars: Vec<Option<Var>>,
}

impl<'w, T: Real> Bound<'w, T> {
    pub fn new(weights: &'w ModelWeights<T>) -> Self {
        Self {
            weights,
            vars: vec![None; weights.params.len()],
        }
    }

    pub fn var(&mut self, tape: &mut Tape<T>, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.index()] {
            return Ok(v);
        }
        let v = tape.param(&self.weights.params, id)?;
        self.vars[id.index()] = Some(v);
        Ok(v)
    }

    pub(crate) fn dense(&mut self, tape: &mut Tape<T>, x: Var, d: DenseIds) -> Result<Var> {
        let w = self.var(tape, d.weight)?;
        let b = self.var(tape, d.bias)?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn norm(&mut self, tape: &mut Tape<T>, x: Var, gain: ParamId, bias: ParamId) -> Result<Var> {
        let g = self.var(tape, gain)?;
        let b = self.var(tape, bias)?;
        tape.layer_norm(x, g, b, self.weights.config.layer_norm_eps)
    }
}

/// Per-layer attention nodes, kept for gradient probes.
#[derive(Debug, Clone, Default)]
pub struct EncoderTrace {
    /// Softmax outputs `[batch*heads, seq, seq]`, one per layer.
    pub attn_probs: Vec<Var>,
    /// The same probabilities after dropout (equal to `attn_probs` when
    /// dropout is inactive).
    pub attn_dropped: Vec<Var>,
}

/// Token plus position embedding, then layer norm and hidden dropout.
/// Returns `[batch*seq, hidden]`.
#[allow(clippy::too_many_arguments)]
pub fn embed_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    input_ids: &[usize],
    position_ids: &[usize],
    batch: usize,
    seq: usize,
    opts: &mut ForwardOptions,
) -> Result<Var> {
    let cfg = &bound.weights.config;
    if input_ids.len() != batch * seq || position_ids.len() != batch * seq {
        return Err(Error::Shape(format!(
            "embed: {} ids / {} positions for batch {batch} × seq {seq}",
            input_ids.len(),
            position_ids.len()
        )));
    }
    for (k, (&id, &pos)) in input_ids.iter().zip(position_ids).enumerate() {
        if id >= cfg.vocab_size {
            return Err(Error::Data(format!(
                "batch row {}: token id {id} ≥ vocab size {}",
                k / seq,
                cfg.vocab_size
            )));
        }
        if pos > cfg.mask_position_id {
            return Err(Error::Data(format!(
                "batch row {}: position id {pos} > mask position {}",
                k / seq,
                cfg.mask_position_id
            )));
        }
    }
    let (p_hid, ids) = (cfg.hidden_dropout, &bound.weights.ids);
    let (tok_id, pos_id, g, b) = (
        ids.token_embedding,
        ids.position_embedding,
        ids.embed_norm_gain,
        ids.embed_norm_bias,
    );
    let tok_table = bound.var(tape, tok_id)?;
    let pos_table = bound.var(tape, pos_id)?;
    let tok = tape.gather_rows(tok_table, input_ids)?;
    let pos = tape.gather_rows(pos_table, position_ids)?;
    let sum = tape.add(tok, pos)?;
    let normed = bound.norm(tape, sum, g, b)?;
    tape.dropout(normed, p_hid, &mut opts.rng, opts.training, DropoutMode::Standard)
}

/// Post-norm transformer layers over `[batch*seq, hidden]`.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    hidden: Var,
    valid_lens: &[usize],
    seq: usize,
    opts: &mut ForwardOptions,
) -> Result<(Var, EncoderTrace)> {
    let cfg = bound.weights.config.clone();
    let batch = valid_lens.len();
    let heads = cfg.heads;
    let inv_sqrt_d = T::from_f64(1.0 / (cfg.head_dim() as f64).sqrt());
    let mut trace = EncoderTrace::default();
    let mut x = hidden;
    for l in 0..cfg.layers {
        let ids = bound.weights.ids.layers[l];
        let q = bound.dense(tape, x, DenseIds { weight: ids.wq, bias: ids.bq })?;
        let k = bound.dense(tape, x, DenseIds { weight: ids.wk, bias: ids.bk })?;
        let v = bound.dense(tape, x, DenseIds { weight: ids.wv, bias: ids.bv })?;
        let qh = tape.split_heads(q, batch, seq, heads)?;
        let kh = tape.split_heads(k, batch, seq, heads)?;
        let vh = tape.split_heads(v, batch, seq, heads)?;
        let scores = tape.bmm(qh, kh, true)?;
        let scores = tape.scale(scores, inv_sqrt_d)?;
        let scores = tape.mask_keys(scores, valid_lens, heads)?;
        let probs = tape.softmax_rows(scores)?;
        let dropped = tape.dropout(
            probs,
            cfg.attention_dropout,
            &mut opts.rng,
            opts.training,
            opts.attn_dropout_mode,
        )?;
        trace.attn_probs.push(probs);
        trace.attn_dropped.push(dropped);
        let ctx = tape.bmm(dropped, vh, false)?;
        let ctx = tape.merge_heads(ctx, batch, seq, heads)?;
        let attn = bound.dense(tape, ctx, DenseIds { weight: ids.wo, bias: ids.bo })?;
        let attn = tape.dropout(attn, cfg.hidden_dropout, &mut opts.rng, opts.training, DropoutMode::Standard)?;
        let res = tape.add(x, attn)?;
        let x1 = bound.norm(tape, res, ids.attn_norm_gain, ids.attn_norm_bias)?;

        let ff = bound.dense(tape, x1, DenseIds { weight: ids.w1, bias: ids.b1 })?;
        let ff = tape.gelu(ff)?;
        let ff = bound.dense(tape, ff, DenseIds { weight: ids.w2, bias: ids.b2 })?;
        let ff = tape.dropout(ff, cfg.hidden_dropout, &mut opts.rng, opts.training, DropoutMode::Standard)?;
        let res = tape.add(x1, ff)?;
        x = bound.norm(tape, res, ids.ffn_norm_gain, ids.ffn_norm_bias)?;
    }
    Ok((x, trace))
}

/// Packs the hidden rows of `slots` (`(row, column)` pairs) into `[M, hidden]`,
/// preserving slot order.
pub fn gather_slots<T: Real>(
    tape: &mut Tape<T>,
    sequence_output: Var,
    slots: &[(usize, usize)],
    batch: usize,
    seq: usize,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(slots.len());
    for &(b, s) in slots {
        if b >= batch || s >= seq {
            return Err(Error::Index(format!(
                "slot ({b}, {s}) outside batch {batch} × seq {seq}"
            )));
        }
        rows.push(b * seq + s);
    }
    tape.gather_rows(sequence_output, &rows)
}

/// Dense + GELU + norm, then the tied token-embedding projection plus an
/// output bias. `[M, hidden]` → `[M, vocab]`.
pub fn mlm_head_forward<T: Real>(tape: &mut Tape<T>, bound: &mut Bound<'_, T>, packed: Var) -> Result<Var> {
    let ids = bound.weights.ids.clone();
    let h = bound.dense(tape, packed, ids.mlm_dense)?;
    let h = tape.gelu(h)?;
    let h = bound.norm(tape, h, ids.mlm_norm_gain, ids.mlm_norm_bias)?;
    let table = bound.var(tape, ids.token_embedding)?;
    let logits = tape.matmul_t(h, table)?;
    let bias = bound.var(tape, ids.mlm_output_bias)?;
    tape.add_bias(logits, bias)
}

/// Single dense layer predicting the in-sequence index of each packed slot.
/// `[Mp, hidden]` → `[Mp, max_positions]`.
pub fn position_head_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &mut Bound<'_, T>,
    packed: Var,
) -> Result<Var> {
    let head = bound
        .weights
        .ids
        .position_head
        .ok_or_else(|| Error::Config("model has no position head".into()))?;
    bound.dense(tape, packed, head)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub mlm: f64,
    pub pos: f64,
    pub total: f64,
}

pub struct ForwardOutput {
    /// `[batch*seq, hidden]`.
    pub sequence_output: Var,
    pub trace: EncoderTrace,
    pub mlm_logits: Var,
    pub pos_logits: Option<Var>,
    pub mlm_loss: LossVar,
    pub pos_loss: Option<LossVar>,
    pub total: Var,
    pub losses: Losses,
    pub batch: usize,
    pub seq: usize,
}

impl ForwardOutput {
    /// Sequence output reshaped to `[batch, seq, hidden]`.
    pub fn sequence_tensor<T: Real>(&self, tape: &Tape<T>) -> Tensor<T> {
        let v = tape.value(self.sequence_output);
        let h = v.cols();
        v.clone().reshape(&[self.batch, self.seq, h]).expect("consistent")
    }
}

fn labels_to_targets(labels: &[usize]) -> Vec<i64> {
    labels.iter().map(|&l| l as i64).collect()
}

/// Encoder plus both heads over a masked batch.
///
/// `total = mlm + λ·pos`. The position term is left off the graph when the
/// batch has no position slots, the model has no position head, or λ = 0;
/// in those cases the computation is identical to a plain masked-token
/// model.
pub fn pretrain_forward<T: Real>(
    tape: &mut Tape<T>,
    weights: &ModelWeights<T>,
    batch: &MaskedBatch,
    opts: &mut ForwardOptions,
) -> Result<ForwardOutput> {
    let (b, s) = (batch.batch_size, batch.seq_len);
    let mut bound = Bound::new(weights);
    let emb = embed_forward(tape, &mut bound, &batch.input_ids, &batch.position_ids, b, s, opts)?;
    let (seq_out, trace) = encoder_forward(tape, &mut bound, emb, &batch.valid_lens, s, opts)?;

    let packed = gather_slots(tape, seq_out, &batch.token_slots, b, s)?;
    let mlm_logits = mlm_head_forward(tape, &mut bound, packed)?;
    let mlm_loss = tape.cross_entropy(mlm_logits, &labels_to_targets(&batch.token_labels), IGNORE_INDEX)?;

    let (pos_logits, pos_loss) = if weights.ids.position_head.is_some() && !batch.position_slots.is_empty() {
        let packed = gather_slots(tape, seq_out, &batch.position_slots, b, s)?;
        let logits = position_head_forward(tape, &mut bound, packed)?;
        let loss = tape.cross_entropy(logits, &labels_to_targets(&batch.position_labels), IGNORE_INDEX)?;
        (Some(logits), Some(loss))
    } else {
        (None, None)
    };

    let lambda = weights.config.position_loss_weight;
    let total = match pos_loss {
        Some(p) if lambda > 0.0 => {
            let weighted = tape.scale(p.var, T::from_f64(lambda))?;
            tape.add(mlm_loss.var, weighted)?
        }
        _ => mlm_loss.var,
    };
    let losses = Losses {
        mlm: tape.scalar(mlm_loss.var).to_f64(),
        pos: pos_loss.map_or(0.0, |p| tape.scalar(p.var).to_f64()),
        total: tape.scalar(total).to_f64(),
    };
    Ok(ForwardOutput {
        sequence_output: seq_out,
        trace,
        mlm_logits,
        pos_logits,
        mlm_loss,
        pos_loss,
        total,
        losses,
        batch: b,
        seq: s,
    })
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let c = t.cols();
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
