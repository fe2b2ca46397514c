use rand::seq::SliceRandom;

use super::config::FinetuneConfig;
use super::data::{generate_span_dataset, SpanExample};
use super::head::span_forward;
use super::metrics::{evaluate_span, SpanMetrics, SpanPrediction};
use crate::autograd::{DropoutMode, Tape};
use crate::error::{Error, Result};
use crate::model::{Bound, ForwardOptions, ModelWeights};
use crate::rng::{stream_rng, Stream};
use crate::training::{sgd_step, OptimizerState};

/// Dev metrics after `epoch` passes over the training set (0 = before any).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss over the epoch; `None` for epoch 0.
    pub train_loss: Option<f64>,
    pub metrics: SpanMetrics,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub epochs: Vec<EpochReport>,
    pub weights: ModelWeights<f32>,
    /// Dev predictions of the final weights.
    pub predictions: Vec<SpanPrediction>,
}

impl FinetuneOutcome {
    pub fn final_metrics(&self) -> SpanMetrics {
        self.epochs.last().expect("epoch 0 is always reported").metrics
    }
}

/// Pretrained weights prepared for span fine-tuning: attention dropout
/// override applied and a span head attached.
pub fn prepare_weights(pretrained: &ModelWeights<f32>, config: &FinetuneConfig) -> Result<ModelWeights<f32>> {
    config.validate()?;
    let mut weights = pretrained.clone();
    if let Some(p) = config.attention_dropout {
        weights.config.attention_dropout = p;
    }
    weights.config.validate()?;
    if config.seq_len > weights.config.max_positions {
        return Err(Error::Config(format!(
            "finetune.seq_len {} exceeds the checkpoint's model.max_positions {}",
            config.seq_len, weights.config.max_positions
        )));
    }
    weights.add_span_head(config.seed)?;
    Ok(weights)
}

/// Fine-tunes on the synthetic span task. Attention-probability dropout uses
/// `config.dropout_gradient_mode` in the backward pass; every other dropout
/// site is standard.
pub fn run_finetune(pretrained: &ModelWeights<f32>, config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let mut weights = prepare_weights(pretrained, config)?;
    let (train, dev) = generate_span_dataset(
        config.seed,
        config.seq_len,
        weights.config.vocab_size,
        config.train_size,
        config.dev_size,
    )?;
    let mut optimizer = OptimizerState::zeros(&weights.params);
    let (metrics, mut predictions) = evaluate_span(&weights, &dev)?;
    let mut epochs = vec![EpochReport {
        epoch: 0,
        train_loss: None,
        metrics,
    }];
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, Stream::FinetuneOrder, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&SpanExample> = idx.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let mut opts = ForwardOptions::train(
                stream_rng(config.seed, Stream::FinetuneDropout, step),
                config.dropout_gradient_mode,
            );
            let loss = {
                let mut bound = Bound::new(&weights);
                let f = span_forward(&mut tape, &mut bound, &batch, &mut opts).map_err(|e| diverged(step, e))?;
                f.loss
            };
            let value = f64::from(tape.scalar(loss));
            tape.backward(loss, &mut weights.params).map_err(|e| diverged(step, e))?;
            sgd_step(&mut weights.params, &mut optimizer, config.lr, config.momentum).map_err(|e| diverged(step, e))?;
            loss_sum += value;
            batches += 1;
            step += 1;
        }
        let (metrics, preds) = evaluate_span(&weights, &dev)?;
        predictions = preds;
        epochs.push(EpochReport {
            epoch,
            train_loss: Some(loss_sum / batches.max(1) as f64),
            metrics,
        });
    }
    Ok(FinetuneOutcome {
        epochs,
        weights,
        predictions,
    })
}

fn diverged(step: u64, err: Error) -> Error {
    if err.is_numerical() {
        Error::Divergence {
            step,
            reason: err.to_string(),
        }
    } else {
        err
    }
}

/// Mean over layers of the L2 norm of the loss gradient at the attention
/// softmax outputs, measured once per dropout gradient mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxProbe {
    pub standard: f64,
    pub straight_through: f64,
}

impl SoftmaxProbe {
    /// `straight_through / standard`.
    pub fn ratio(&self) -> f64 {
        if self.straight_through == self.standard {
            1.0
        } else {
            self.straight_through / self.standard
        }
    }
}

/// Gradient norm at each layer's attention softmax for one mode. Forward
/// dropout masks depend only on `seed`, so both modes see identical masks.
pub fn softmax_gradient_norms(
    weights: &ModelWeights<f32>,
    probe: &[SpanExample],
    p_attn: f64,
    mode: DropoutMode,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut w = weights.clone();
    w.config.attention_dropout = p_attn;
    w.config.validate()?;
    let refs: Vec<&SpanExample> = probe.iter().collect();
    let mut tape = Tape::new();
    let mut opts = ForwardOptions::train(stream_rng(seed, Stream::FinetuneDropout, u64::MAX), mode);
    let f = {
        let mut bound = Bound::new(&w);
        span_forward(&mut tape, &mut bound, &refs, &mut opts)?
    };
    let grads = tape.backward(f.loss, &mut w.params)?;
    Ok(f.trace
        .attn_probs
        .iter()
        .map(|&v| grads.get(v).map_or(0.0, |g| g.l2_norm()))
        .collect())
}

/// Measures both modes from the same weights. No parameters are updated.
pub fn probe_softmax_gradients(
    weights: &ModelWeights<f32>,
    probe: &[SpanExample],
    p_attn: f64,
    seed: u64,
) -> Result<SoftmaxProbe> {
    let mut w = weights.clone();
    w.add_span_head(seed)?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(SoftmaxProbe {
        standard: mean(softmax_gradient_norms(&w, probe, p_attn, DropoutMode::Standard, seed)?),
        straight_through: mean(softmax_gradient_norms(&w, probe, p_attn, DropoutMode::StraightThrough, seed)?),
    })
}
