use std::io::Write;

use serde::{Deserialize, Serialize};

use super::data::SpanExample;
use super::head::span_forward;
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Bound, ForwardOptions, ModelWeights};
use crate::tensor::Real;

/// Exact match and token-overlap F1, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanMetrics {
    pub exact_match: f64,
    pub f1: f64,
    pub count: usize,
}

/// Mean over seeds, keeping the per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAverage {
    pub exact_match: f64,
    pub f1: f64,
    pub per_seed: Vec<(u64, SpanMetrics)>,
}

impl SeedAverage {
    pub fn new(per_seed: Vec<(u64, SpanMetrics)>) -> Self {
        let n = per_seed.len().max(1) as f64;
        Self {
            exact_match: per_seed.iter().map(|(_, m)| m.exact_match).sum::<f64>() / n,
            f1: per_seed.iter().map(|(_, m)| m.f1).sum::<f64>() / n,
            per_seed,
        }
    }
}

/// EM and F1 of one inclusive predicted span against the gold span.
pub fn score_span(pred: (usize, usize), gold: (usize, usize)) -> (f64, f64) {
    let em = if pred == gold { 1.0 } else { 0.0 };
    let lo = pred.0.max(gold.0);
    let hi = pred.1.min(gold.1);
    if hi < lo {
        return (em, 0.0);
    }
    let overlap = (hi - lo + 1) as f64;
    let p = overlap / (pred.1 - pred.0 + 1) as f64;
    let r = overlap / (gold.1 - gold.0 + 1) as f64;
    (em, 2.0 * p * r / (p + r))
}

/// Argmax start and end, swapped when the start lands after the end.
pub fn predict_span(start: usize, end: usize) -> (usize, usize) {
    if start > end {
        (end, start)
    } else {
        (start, end)
    }
}

/// One row of the dev-set predictions dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub example_id: usize,
    pub gold_start: usize,
    pub gold_end: usize,
    pub pred_start: usize,
    pub pred_end: usize,
    pub em: f64,
    pub f1: f64,
}

pub fn aggregate(predictions: &[SpanPrediction]) -> SpanMetrics {
    let n = predictions.len();
    let d = n.max(1) as f64;
    SpanMetrics {
        exact_match: predictions.iter().map(|p| p.em).sum::<f64>() / d,
        f1: predictions.iter().map(|p| p.f1).sum::<f64>() / d,
        count: n,
    }
}

/// Scores `(pred_start, pred_end)` pairs against the gold spans of `examples`.
pub fn score_predictions(examples: &[SpanExample], preds: &[(usize, usize)]) -> Vec<SpanPrediction> {
    examples
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (ex, &(s, e)))| {
            let (em, f1) = score_span((s, e), (ex.start, ex.end));
            SpanPrediction {
                example_id: i,
                gold_start: ex.start,
                gold_end: ex.end,
                pred_start: s,
                pred_end: e,
                em,
                f1,
            }
        })
        .collect()
}

/// Dropout-off predictions for every dev example, `batch_size` at a time.
pub fn predict_spans<T: Real>(
    weights: &ModelWeights<T>,
    dev: &[SpanExample],
    batch_size: usize,
) -> Result<Vec<(usize, usize)>> {
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut out = Vec::with_capacity(dev.len());
    for chunk in dev.chunks(batch_size) {
        let refs: Vec<&SpanExample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let mut bound = Bound::new(weights);
        let f = span_forward(&mut tape, &mut bound, &refs, &mut ForwardOptions::eval())?;
        let starts = argmax_rows(tape.value(f.start_logits));
        let ends = argmax_rows(tape.value(f.end_logits));
        out.extend(starts.into_iter().zip(ends).map(|(s, e)| predict_span(s, e)));
    }
    Ok(out)
}

pub const EVAL_BATCH_SIZE: usize = 64;

pub fn evaluate_span<T: Real>(weights: &ModelWeights<T>, dev: &[SpanExample]) -> Result<(SpanMetrics, Vec<SpanPrediction>)> {
    let preds = predict_spans(weights, dev, EVAL_BATCH_SIZE)?;
    let rows = score_predictions(dev, &preds);
    Ok((aggregate(&rows), rows))
}

pub fn write_predictions<W: Write>(sink: W, rows: &[SpanPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("predictions csv: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["example_id", "gold_start", "gold_end", "pred_start", "pred_end", "em", "f1"])
            .map_err(|e| Error::Data(format!("predictions csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}
