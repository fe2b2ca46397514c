use super::*;
use crate::error::Error;
use crate::masking::{synthetic_corpus, Corpus};
use crate::model::{ModelConfig, ModelWeights};

fn small_model() -> ModelConfig {
    ModelConfig {
        max_positions: 16,
        mask_position_id: 16,
        ..ModelConfig::tiny()
    }
}

fn small_train() -> TrainConfig {
    let mut c = TrainConfig {
        total_steps: 20,
        lr_peak: 0.05,
        warmup_steps: 4,
        eval_every: 5,
        eval_batches: 2,
        ..TrainConfig::default()
    };
    c.phase1.seq_len = 8;
    c.phase1.batch_size = 4;
    c.phase2.seq_len = 16;
    c.phase2.batch_size = 4;
    c
}

fn corpus() -> Corpus {
    Corpus::build(&synthetic_corpus(60, 0), 50).unwrap()
}

fn run(train: &TrainConfig, mode: Mode) -> PretrainOutcome {
    run_pretraining(&small_model(), train, &corpus(), mode, &mut |_| Ok(())).unwrap()
}

fn csv_bytes(m: &[MetricsRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, m).unwrap();
    buf
}

#[test]
fn zero_steps_returns_init() {
    let train = TrainConfig {
        total_steps: 0,
        ..small_train()
    };
    let out = run(&train, Mode::Position);
    assert!(out.metrics.is_empty());
    let c = corpus();
    let model = effective_model_config(&small_model(), c.vocab.len(), Mode::Position);
    let init = ModelWeights::<f32>::init(&model, train.seed).unwrap();
    assert!(out.checkpoint.weights.bit_eq(&init));
    assert_eq!(out.checkpoint.counters, Counters::default());
}

#[test]
fn runs_are_deterministic() {
    let a = run(&small_train(), Mode::Position);
    let b = run(&small_train(), Mode::Position);
    assert_eq!(csv_bytes(&a.metrics), csv_bytes(&b.metrics));
    assert_eq!(
        encode_checkpoint(&a.checkpoint).unwrap(),
        encode_checkpoint(&b.checkpoint).unwrap()
    );
    let steps: Vec<u64> = a.metrics.iter().map(|m| m.step).collect();
    assert_eq!(steps, vec![5, 10, 15, 20]);
    let phases: Vec<u8> = a.metrics.iter().map(|m| m.phase).collect();
    assert_eq!(phases, vec![1, 1, 1, 2]);
    assert!(a.metrics.iter().all(|m| m.wall_seconds == 0.0));
    assert!(a.metrics.iter().all(|m| m.pos_loss > 0.0));
}

#[test]
fn baseline_has_zero_position_columns() {
    let out = run(&small_train(), Mode::Baseline);
    assert!(out.metrics.iter().all(|m| m.pos_loss == 0.0 && m.pos_accuracy == 0.0));
    assert!(out.metrics.iter().all(|m| m.total_loss == m.mlm_loss));
    assert!(out.checkpoint.weights.ids.position_head.is_none());
    assert_eq!(out.checkpoint.model_config().position_loss_weight, 0.0);
}

#[test]
fn tokens_seen_grows_by_batch_tokens() {
    let out = run(&small_train(), Mode::Position);
    // 18 phase-1 updates of 4·8 tokens, 2 phase-2 updates of 4·16.
    assert_eq!(out.checkpoint.counters.tokens_seen, 18 * 32 + 2 * 64);
    assert_eq!(out.checkpoint.counters.phase1_steps, 18);
    assert_eq!(out.checkpoint.counters.phase2_steps, 2);
    let seen: Vec<u64> = out.metrics.iter().map(|m| m.tokens_seen).collect();
    assert_eq!(seen, vec![5 * 32, 10 * 32, 15 * 32, 18 * 32 + 2 * 64]);
}

#[test]
fn zero_learning_rate_is_stationary() {
    let mut train = small_train();
    train.lr_peak = 0.0;
    train.phase1.steps = Some(15);
    train.phase2.steps = Some(0);
    let out = run(&train, Mode::Position);
    let first = &out.metrics[0];
    for m in &out.metrics {
        assert_eq!(m.total_loss.to_bits(), first.total_loss.to_bits());
        assert_eq!(m.mlm_accuracy, first.mlm_accuracy);
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut train = small_train();
    train.checkpoint_every = 10;
    let mut saved = Vec::new();
    let full = run_pretraining(&small_model(), &train, &corpus(), Mode::Position, &mut |e| {
        if let Event::Checkpoint(ck) = e {
            saved.push(encode_checkpoint(ck)?);
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(saved.len(), 1);
    let ck = decode_checkpoint(&saved[0]).unwrap();
    assert_eq!(ck.counters.step, 10);
    let resumed = Trainer::resume(ck, &corpus().stream).unwrap().run(&mut |_| Ok(())).unwrap();
    let tail: Vec<_> = full.metrics.iter().filter(|m| m.step > 10).cloned().collect();
    assert_eq!(csv_bytes(&resumed.metrics), csv_bytes(&tail));
    assert!(resumed.checkpoint.bit_eq(&full.checkpoint));
}

#[test]
fn modes_share_token_masking() {
    let c = corpus();
    let train = small_train();
    let mk = |mode| {
        let model = effective_model_config(&small_model(), c.vocab.len(), mode);
        Trainer::new(&model, &train, &c.stream, mode).unwrap()
    };
    let (a, b) = (mk(Mode::Baseline), mk(Mode::Position));
    for step in [0, 7, 19] {
        let (x, y) = (a.train_batch(step).unwrap(), b.train_batch(step).unwrap());
        assert_eq!(x.input_ids, y.input_ids);
        assert_eq!(x.token_slots, y.token_slots);
        assert_eq!(x.token_labels, y.token_labels);
        assert!(x.position_slots.is_empty());
        assert!(!y.position_slots.is_empty());
    }
}

#[test]
fn divergence_keeps_earlier_metrics() {
    let mut train = small_train();
    train.lr_peak = 1e12;
    train.warmup_steps = 0;
    train.eval_every = 1;
    let mut seen = Vec::new();
    let err = run_pretraining(&small_model(), &train, &corpus(), Mode::Position, &mut |e| {
        if let Event::Metrics(m) = e {
            seen.push(m.clone());
        }
        Ok(())
    })
    .unwrap_err();
    match err {
        Error::Divergence { step, .. } => assert_eq!(seen.len() as u64, step),
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn corpus_too_small_is_data_error() {
    let c = Corpus::build(&["alpha beta gamma"], 50).unwrap();
    let err = run_pretraining(&small_model(), &small_train(), &c, Mode::Position, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn sequence_longer_than_table_is_config_error() {
    let mut train = small_train();
    train.phase2.seq_len = 32;
    let err = run_pretraining(&small_model(), &train, &corpus(), Mode::Position, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}
