use std::time::Instant;

use rand::Rng as _;

use super::checkpoint::{Checkpoint, Counters};
use super::config::{Mode, TrainConfig};
use super::evaluate::evaluate;
use super::metrics::MetricsRecord;
use super::optim::{lr_at_step, sgd_step, OptimizerState};
use crate::autograd::{DropoutMode, Tape};
use crate::error::{Error, Result};
use crate::masking::{assemble_batch, make_examples, Corpus, Example, MaskStreams, MaskedBatch, MaskingConfig};
use crate::model::{pretrain_forward, ForwardOptions, ModelConfig, ModelWeights};
use crate::rng::{stream_rng, RngState, Stream};

/// Progress notifications emitted while training.
#[derive(Debug)]
pub enum Event<'a> {
    Metrics(&'a MetricsRecord),
    /// An intermediate checkpoint (the final one is returned, not emitted).
    Checkpoint(&'a Checkpoint),
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Debug, Clone)]
struct PhaseData {
    seq_len: usize,
    batch_size: usize,
    train: Vec<Example>,
    eval: Vec<MaskedBatch>,
}

/// Masking actually applied in `mode`.
pub fn effective_masking(config: &TrainConfig, mode: Mode) -> MaskingConfig {
    match mode {
        Mode::Baseline => config.masking.baseline(),
        Mode::Position => config.masking.clone(),
    }
}

/// Model config actually trained in `mode`: the vocabulary size comes from
/// the corpus and baseline runs carry λ = 0.
pub fn effective_model_config(model: &ModelConfig, vocab_len: usize, mode: Mode) -> ModelConfig {
    let mut cfg = model.clone();
    cfg.vocab_size = vocab_len;
    if mode == Mode::Baseline {
        cfg.position_loss_weight = 0.0;
    }
    cfg
}

/// Number of tail tokens held out for evaluation.
fn heldout_tokens(config: &TrainConfig) -> usize {
    let bs = config.phase1.batch_size.max(config.phase2.batch_size);
    config.eval_batches * bs * (config.phase2.seq_len - 2)
}

fn build_phases(config: &TrainConfig, mode: Mode, model: &ModelConfig, stream: &[usize]) -> Result<[PhaseData; 2]> {
    let held = heldout_tokens(config);
    if stream.len() < held + config.phase2.seq_len {
        return Err(Error::Data(format!(
            "corpus has {} tokens; at least {} are needed ({} held out for evaluation)",
            stream.len(),
            held + config.phase2.seq_len,
            held
        )));
    }
    let (train, heldout) = stream.split_at(stream.len() - held);
    let masking = effective_masking(config, mode);
    let build = |phase: u8| -> Result<PhaseData> {
        let pc = config.phase(phase);
        let examples = make_examples(heldout, pc.seq_len)?;
        let eval = examples
            .chunks(pc.batch_size)
            .take(config.eval_batches)
            .enumerate()
            .map(|(i, chunk)| {
                assemble_batch(
                    chunk,
                    &masking,
                    model.vocab_size,
                    model.mask_position_id,
                    MaskStreams::eval(config.seed, i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PhaseData {
            seq_len: pc.seq_len,
            batch_size: pc.batch_size,
            train: make_examples(train, pc.seq_len)?,
            eval,
        })
    };
    Ok([build(1)?, build(2)?])
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

/// Two-phase SGD pretraining. Every random draw of update `t` comes from
/// sub-stream `t` of its named stream, so a run resumed from a checkpoint
/// replays exactly what the uninterrupted run would have done.
pub struct Trainer {
    config: TrainConfig,
    mode: Mode,
    masking: MaskingConfig,
    weights: ModelWeights<f32>,
    optimizer: OptimizerState,
    counters: Counters,
    phases: [PhaseData; 2],
    started: Instant,
}

impl Trainer {
    /// Fresh run. `model.vocab_size` must cover every id in `stream`.
    pub fn new(model: &ModelConfig, config: &TrainConfig, stream: &[usize], mode: Mode) -> Result<Self> {
        let mut model = model.clone();
        if mode == Mode::Baseline {
            model.position_loss_weight = 0.0;
        }
        let weights = ModelWeights::init_with_heads(&model, config.seed, mode == Mode::Position)?;
        let optimizer = OptimizerState::zeros(&weights.params);
        Self::assemble(config.clone(), mode, weights, optimizer, Counters::default(), stream)
    }

    /// Continues the run saved in `checkpoint` over the same token stream.
    pub fn resume(checkpoint: Checkpoint, stream: &[usize]) -> Result<Self> {
        if checkpoint.rng != RngState::new(checkpoint.train_config.seed) {
            return Err(Error::Config("checkpoint rng state does not match its seed".into()));
        }
        Self::assemble(
            checkpoint.train_config,
            checkpoint.mode,
            checkpoint.weights,
            checkpoint.optimizer,
            checkpoint.counters,
            stream,
        )
    }

    fn assemble(
        config: TrainConfig,
        mode: Mode,
        weights: ModelWeights<f32>,
        optimizer: OptimizerState,
        counters: Counters,
        stream: &[usize],
    ) -> Result<Self> {
        config.validate()?;
        let model = &weights.config;
        if config.phase2.seq_len > model.max_positions {
            return Err(Error::Config(format!(
                "train.phase2.seq_len {} exceeds model.max_positions {}",
                config.phase2.seq_len, model.max_positions
            )));
        }
        if let Some(&bad) = stream.iter().find(|&&id| id >= model.vocab_size) {
            return Err(Error::Config(format!(
                "corpus token id {bad} outside model.vocab_size {}",
                model.vocab_size
            )));
        }
        if counters.step > config.total() {
            return Err(Error::Config(format!(
                "checkpoint step {} beyond the configured {} steps",
                counters.step,
                config.total()
            )));
        }
        let phases = build_phases(&config, mode, model, stream)?;
        Ok(Self {
            masking: effective_masking(&config, mode),
            config,
            mode,
            weights,
            optimizer,
            counters,
            phases,
            started: Instant::now(),
        })
    }

    pub fn weights(&self) -> &ModelWeights<f32> {
        &self.weights
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn is_done(&self) -> bool {
        self.counters.step >= self.config.total()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train_config: self.config.clone(),
            mode: self.mode,
            counters: self.counters,
            rng: RngState::new(self.config.seed),
            weights: self.weights.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Training batch of update `step`.
    pub fn train_batch(&self, step: u64) -> Result<MaskedBatch> {
        let pd = &self.phases[usize::from(self.config.phase_of(step) - 1)];
        let mut order = stream_rng(self.config.seed, Stream::DataOrder, step);
        let examples: Vec<Example> = (0..pd.batch_size)
            .map(|_| pd.train[order.random_range(0..pd.train.len())].clone())
            .collect();
        let m = &self.weights.config;
        assemble_batch(
            &examples,
            &self.masking,
            m.vocab_size,
            m.mask_position_id,
            MaskStreams::train(self.config.seed, step),
        )
    }

    /// Runs one update.
    pub fn step(&mut self) -> Result<()> {
        let step = self.counters.step;
        let phase = self.config.phase_of(step);
        let batch = self.train_batch(step)?;
        let mut tape = Tape::new();
        let mut opts = ForwardOptions::train(stream_rng(self.config.seed, Stream::Dropout, step), DropoutMode::Standard);
        let out = pretrain_forward(&mut tape, &self.weights, &batch, &mut opts).map_err(|e| diverged(step, e))?;
        if !out.losses.total.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {}", out.losses.total),
            });
        }
        tape.backward(out.total, &mut self.weights.params)
            .map_err(|e| diverged(step, e))?;
        let lr = self.lr(step);
        sgd_step(&mut self.weights.params, &mut self.optimizer, lr, self.config.momentum)
            .map_err(|e| diverged(step, e))?;

        self.counters.step += 1;
        if phase == 1 {
            self.counters.phase1_steps += 1;
        } else {
            self.counters.phase2_steps += 1;
        }
        self.counters.tokens_seen += batch.num_tokens() as u64;
        Ok(())
    }

    fn lr(&self, step: u64) -> f64 {
        lr_at_step(step, self.config.total(), self.config.warmup_steps, self.config.lr_peak)
    }

    /// Held-out metrics for the phase of the most recent update.
    pub fn evaluate_now(&self) -> Result<MetricsRecord> {
        let last = self.counters.step.saturating_sub(1);
        let phase = self.config.phase_of(last);
        let r = evaluate(&self.weights, &self.phases[usize::from(phase - 1)].eval)?;
        Ok(MetricsRecord {
            step: self.counters.step,
            phase,
            lr: self.lr(last),
            total_loss: r.losses.total,
            mlm_loss: r.losses.mlm,
            pos_loss: r.losses.pos,
            mlm_accuracy: r.mlm_accuracy,
            pos_accuracy: r.pos_accuracy,
            tokens_seen: self.counters.tokens_seen,
            wall_seconds: if self.config.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            seed: self.config.seed,
        })
    }

    /// Trains to the end of the schedule, evaluating every `eval_every`
    /// updates and after the last one. Metrics reach `on_event` as soon as
    /// they are computed, so a divergence still leaves the earlier records
    /// with the caller.
    pub fn run(mut self, on_event: &mut dyn FnMut(Event<'_>) -> Result<()>) -> Result<PretrainOutcome> {
        let total = self.config.total();
        let mut metrics = Vec::new();
        while self.counters.step < total {
            self.step()?;
            let k = self.counters.step;
            if k.is_multiple_of(self.config.eval_every) || k == total {
                let rec = self.evaluate_now()?;
                on_event(Event::Metrics(&rec))?;
                metrics.push(rec);
            }
            if self.config.checkpoint_every > 0 && k.is_multiple_of(self.config.checkpoint_every) && k < total {
                on_event(Event::Checkpoint(&self.checkpoint()))?;
            }
        }
        Ok(PretrainOutcome {
            checkpoint: self.checkpoint(),
            metrics,
        })
    }

    pub fn seq_len(&self, phase: u8) -> usize {
        self.phases[usize::from(phase - 1)].seq_len
    }
}

/// Pretrains a fresh model on `corpus`. The model's vocabulary size is taken
/// from the corpus vocabulary.
pub fn run_pretraining(
    model: &ModelConfig,
    config: &TrainConfig,
    corpus: &Corpus,
    mode: Mode,
    on_event: &mut dyn FnMut(Event<'_>) -> Result<()>,
) -> Result<PretrainOutcome> {
    let model = effective_model_config(model, corpus.vocab.len(), mode);
    Trainer::new(&model, config, &corpus.stream, mode)?.run(on_event)
}
