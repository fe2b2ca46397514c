//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are
//! printed as they are produced. The process fails if any criterion fails
//! other than those in `KNOWN_UNATTAINABLE`, which must fail for their
//! documented reason only.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use pmlm::autograd::{dropout_backward, DropoutMask, DropoutMode, Tape};
use pmlm::finetune::{aggregate, predict_span, score_predictions, SpanExample};
use pmlm::masking::{
    assemble_batch, is_special, make_examples, synthetic_corpus, Corpus, MaskStreams, MaskingConfig, PositionBranch,
    TokenBranch, FIRST_WORD_ID, UNK_ID,
};
use pmlm::model::{pretrain_forward, ForwardOptions, ModelConfig, ModelWeights};
use pmlm::rng::{stream_rng, Stream};
use pmlm::tensor::{Real, Tensor};
use pmlm::training::{
    load_checkpoint, run_pretraining, save_checkpoint, write_metrics, Checkpoint, Event, MetricsRecord, Mode,
    PhaseConfig, TrainConfig, Trainer,
};
use pmlm_cli::finetune::{read_csv, ProbeRow, SummaryRow};
use pmlm_cli::gradcheck::{run_gradcheck, CheckSize, TOLERANCE};
use pmlm_cli::report::ComparisonRow;
use pmlm_cli::sweep::read_sweep_csv;
use rand::Rng;

/// Criteria that cannot hold as stated; see the decisions log.
const KNOWN_UNATTAINABLE: &[u8] = &[1];

struct Verdict {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    /// For a known-unattainable criterion: whether it failed only for the
    /// documented reason.
    expected_failure: bool,
}

impl Verdict {
    fn new(id: u8, name: &'static str, pass: bool, detail: String) -> Self {
        Self {
            id,
            name,
            pass,
            detail,
            expected_failure: false,
        }
    }
}

fn pmlm(dir: &Path, out_dir: Option<&Path>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pmlm"));
    cmd.args(args).current_dir(dir).env_remove("PMLM_OUT");
    if let Some(o) = out_dir {
        cmd.env("PMLM_OUT", o);
    }
    cmd.output().expect("pmlm binary runs")
}

fn checked(out: Output, what: &str) -> Output {
    assert!(
        out.status.success(),
        "{what} failed ({:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn subdirs(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir() && p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

fn last_metrics(run: &Path) -> MetricsRecord {
    let rows = pmlm::training::read_metrics(fs::File::open(run.join("metrics.csv")).unwrap()).unwrap();
    rows.last().cloned().expect("metrics rows")
}

/// Model and schedule shared by the multi-run criteria, sized so that one
/// pretraining run takes seconds.
const REDUCED: &str = r#"{
  "model": {"hidden": 64, "layers": 2, "heads": 4, "ffn_size": 256},
  "train": {"total_steps": 600, "eval_every": 100, "warmup_steps": 50},
  "paths": {"corpus": "corpus.txt"}
}"#;

// ---- 1 ---------------------------------------------------------------------

fn gradient_fidelity(work: &Path) -> Verdict {
    let t = Instant::now();
    let out = pmlm(work, None, &["gradcheck", "--size", "tiny"]);
    let secs = t.elapsed().as_secs_f64();
    let code = out.status.code().unwrap_or(-1);
    let o = run_gradcheck(CheckSize::Tiny, None).unwrap();
    let below: Vec<String> = o.below_resolution().iter().map(|p| p.name.clone()).collect();
    let pass = code == 0 && secs < 60.0 && o.report.max_rel_error < TOLERANCE;
    let detail = format!(
        "exit {code} in {secs:.1}s; max rel error {:.2e} at {}; exactly-zero gradients below finite-difference \
         resolution {:.1e}: {below:?}; max over all other parameters {:.2e}; quadratic self-test {:.1e}",
        o.report.max_rel_error,
        o.report.worst_param,
        o.resolution(),
        o.max_resolved_error(),
        o.self_test_error
    );
    let structural = |n: &String| n.ends_with(".attn.bk") || n == "heads.span.bias";
    let negative = pmlm(work, None, &["gradcheck", "--size", "tiny", "--inject-bug"]).status.code();
    let expected_failure = secs < 60.0
        && o.max_resolved_error() < TOLERANCE
        && o.self_test_error < 1e-9
        && !below.is_empty()
        && below.iter().all(structural)
        && negative == Some(3);
    Verdict {
        expected_failure,
        ..Verdict::new(1, "gradient fidelity", pass, detail)
    }
}

// ---- 2 ---------------------------------------------------------------------

fn dropout_trial<T: Real>(rng: &mut impl Rng, p: f64) -> (bool, bool) {
    let shape = vec![rng.random_range(1..6), rng.random_range(1..9)];
    let n = shape[0] * shape[1];
    let g: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-3.0..3.0))).collect();
    let keep: Vec<bool> = (0..n).map(|_| p == 0.0 || rng.random::<f64>() >= p).collect();
    let upstream = Tensor::new(shape.clone(), g.clone()).unwrap();
    let mask = DropoutMask { shape, keep, p };
    let st = dropout_backward(&upstream, &mask, DropoutMode::StraightThrough).unwrap();
    let sd = dropout_backward(&upstream, &mask, DropoutMode::Standard).unwrap();
    let bits = |v: T| v.to_f64().to_bits();
    let st_ok = st.data().iter().zip(&g).all(|(a, b)| bits(*a) == bits(*b));
    let scale = T::ONE / (T::ONE - T::from_f64(p));
    let sd_ok = sd
        .data()
        .iter()
        .zip(&g)
        .zip(&mask.keep)
        .all(|((a, b), k)| bits(*a) == bits(if *k { *b * scale } else { T::ZERO }));
    (st_ok, sd_ok)
}

fn straight_through_contract() -> Verdict {
    let mut rng = stream_rng(2, Stream::Dropout, 0);
    let (mut st_bad, mut sd_bad) = (0, 0);
    for trial in 0..1000 {
        let p = if trial % 10 == 0 { 0.0 } else { rng.random_range(0.0..0.95) };
        let (st, sd) = if trial % 2 == 0 {
            dropout_trial::<f64>(&mut rng, p)
        } else {
            dropout_trial::<f32>(&mut rng, p)
        };
        st_bad += usize::from(!st);
        sd_bad += usize::from(!sd);
    }
    Verdict::new(
        2,
        "straight-through contract",
        st_bad == 0 && sd_bad == 0,
        format!("1000 triples (f32 and f64): straight-through mismatches {st_bad}, standard mismatches {sd_bad}"),
    )
}

// ---- 3 ---------------------------------------------------------------------

fn masking_statistics() -> Verdict {
    let vocab = 500;
    let seq = 64;
    let cfg = MaskingConfig::default();
    let mut rng = stream_rng(3, Stream::Corpus, 0);
    let (mut tok, mut pos) = ([0usize; 3], [0usize; 3]);
    let mut violations = 0usize;
    let mut i = 0u64;
    while tok.iter().sum::<usize>() < 100_000 || pos.iter().sum::<usize>() < 100_000 {
        let stream: Vec<usize> = (0..64 * (seq - 2))
            .map(|_| {
                if rng.random::<f64>() < 0.02 {
                    UNK_ID
                } else {
                    rng.random_range(FIRST_WORD_ID..vocab)
                }
            })
            .collect();
        let examples = make_examples(&stream, seq).unwrap();
        let batch = assemble_batch(&examples, &cfg, vocab, seq, MaskStreams::train(3, i)).unwrap();
        i += 1;
        for b in &batch.token_branches {
            tok[match b {
                TokenBranch::Mask => 0,
                TokenBranch::Random => 1,
                TokenBranch::Keep => 2,
            }] += 1;
        }
        for b in &batch.position_branches {
            pos[match b {
                PositionBranch::Mask => 0,
                PositionBranch::Keep => 1,
                PositionBranch::Random => 2,
            }] += 1;
        }
        for &(r, j) in batch.token_slots.iter().chain(&batch.position_slots) {
            let ex = &examples[r];
            let in_body = j >= 1 && j + 1 < ex.valid_len;
            if !in_body || is_special(ex.ids[j]) {
                violations += 1;
            }
        }
        violations += batch.token_labels.iter().filter(|&&l| is_special(l)).count();
    }
    let freq = |c: [usize; 3]| {
        let n = c.iter().sum::<usize>() as f64;
        c.map(|x| x as f64 / n)
    };
    let (tf, pf) = (freq(tok), freq(pos));
    let close = |f: [f64; 3], want: [f64; 3]| f.iter().zip(want).all(|(a, b)| (a - b).abs() <= 0.005);
    let pass = close(pf, [0.90, 0.05, 0.05]) && close(tf, [0.80, 0.10, 0.10]) && violations == 0;
    Verdict::new(
        3,
        "masking statistics",
        pass,
        format!(
            "{} position slots mask/keep/random {:.4}/{:.4}/{:.4}; {} token slots mask/random/keep {:.4}/{:.4}/{:.4}; \
             special-token violations {violations}",
            pos.iter().sum::<usize>(),
            pf[0],
            pf[1],
            pf[2],
            tok.iter().sum::<usize>(),
            tf[0],
            tf[1],
            tf[2]
        ),
    )
}

// ---- 4 ---------------------------------------------------------------------

fn baseline_equivalence() -> Verdict {
    let cfg = ModelConfig {
        position_loss_weight: 0.0,
        ..ModelConfig::tiny()
    };
    let masking = MaskingConfig {
        position_mask_pct: 0.0,
        ..MaskingConfig::default()
    };
    let mut with_head = ModelWeights::<f32>::init_with_heads(&cfg, 4, true).unwrap();
    let mut headless = with_head.without_position_head().unwrap();
    let mut rng = stream_rng(4, Stream::Corpus, 0);
    let (mut loss_diffs, mut grad_diffs, mut compared) = (0, 0, 0);
    for i in 0..100u64 {
        let seq = rng.random_range(4..=cfg.max_positions);
        let rows = rng.random_range(1..=4);
        let stream: Vec<usize> = (0..rows * (seq - 2) - rng.random_range(0..seq - 2))
            .map(|_| rng.random_range(FIRST_WORD_ID..cfg.vocab_size))
            .collect();
        let examples = make_examples(&stream, seq).unwrap();
        let batch =
            assemble_batch(&examples, &masking, cfg.vocab_size, cfg.mask_position_id, MaskStreams::train(4, i))
                .unwrap();
        let run = |w: &mut ModelWeights<f32>| {
            let mut tape = Tape::new();
            let mut opts = ForwardOptions::train(stream_rng(4, Stream::Dropout, i), DropoutMode::Standard);
            let out = pretrain_forward(&mut tape, w, &batch, &mut opts).unwrap();
            w.params.zero_grad();
            tape.backward(out.total, &mut w.params).unwrap();
            out.losses
        };
        let (a, b) = (run(&mut with_head), run(&mut headless));
        loss_diffs += [a.mlm, a.pos, a.total]
            .iter()
            .zip([b.mlm, b.pos, b.total])
            .filter(|(x, y)| x.to_bits() != y.to_bits())
            .count();
        for p in headless.params.iter() {
            let q = with_head.params.by_name(&p.name).unwrap();
            compared += 1;
            if !q.grad.bit_eq(&p.grad) {
                grad_diffs += 1;
            }
        }
    }
    Verdict::new(
        4,
        "baseline equivalence",
        loss_diffs == 0 && grad_diffs == 0,
        format!(
            "100 batches: loss bit mismatches {loss_diffs}, shared-gradient bit mismatches {grad_diffs} of {compared}"
        ),
    )
}

// ---- 5 ---------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct Pinned {
    step: u64,
    mlm_acc: f64,
    pos_acc: f64,
    total_loss: f64,
}

/// Returns the verdict and the final checkpoint of the default run.
fn toy_convergence(work: &Path) -> (Verdict, PathBuf) {
    fs::write(work.join("default.json"), r#"{"paths": {"corpus": "corpus.txt", "out_dir": "c5"}}"#).unwrap();
    let t = Instant::now();
    checked(pmlm(work, None, &["pretrain", "default.json", "--mode", "position", "--seed", "0"]), "default pretrain");
    let secs = t.elapsed().as_secs_f64();
    let run = subdirs(&work.join("c5"), "position-seed0-").pop().unwrap();
    let info: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    let vocab = info["vocab_size"].as_u64().unwrap() as f64;
    let seq = info["seq_len"].as_u64().unwrap() as f64;
    let last = last_metrics(&run);
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_convergence.json");
    let pinned: Pinned = serde_json::from_str(&fs::read_to_string(&fixture).unwrap()).unwrap();
    let (mlm_x, pos_x) = (last.mlm_accuracy * vocab, last.pos_accuracy * seq);
    let pinned_ok = last.step == pinned.step
        && (last.mlm_accuracy - pinned.mlm_acc).abs() <= 1e-6
        && (last.pos_accuracy - pinned.pos_acc).abs() <= 1e-6
        && (last.total_loss - pinned.total_loss).abs() <= 1e-6;
    let pass = mlm_x >= 5.0 && pos_x >= 5.0 && pinned_ok && secs < 900.0;
    let detail = format!(
        "step {}: mlm_acc {:.6} ({mlm_x:.1}x chance 1/{vocab}), pos_acc {:.6} ({pos_x:.1}x chance 1/{seq}); \
         pinned fixture {} (mlm {:.6}, pos {:.6}, loss {:.6}); {secs:.0}s",
        last.step,
        last.mlm_accuracy,
        last.pos_accuracy,
        if pinned_ok { "matches" } else { "DIFFERS" },
        pinned.mlm_acc,
        pinned.pos_acc,
        pinned.total_loss,
    );
    (Verdict::new(5, "toy convergence regression", pass, detail), run.join("final.pmlm"))
}

// ---- 6 ---------------------------------------------------------------------

fn mlm_degradation(work: &Path) -> Verdict {
    fs::write(work.join("reduced.json"), REDUCED).unwrap();
    let out = work.join("c6");
    let mut dirs = Vec::new();
    for seed in 0..3 {
        for mode in ["baseline", "position"] {
            let s = seed.to_string();
            checked(
                pmlm(work, Some(&out), &["pretrain", "reduced.json", "--mode", mode, "--seed", &s]),
                "reduced pretrain",
            );
        }
    }
    dirs.extend(subdirs(&out, "baseline-"));
    dirs.extend(subdirs(&out, "position-"));
    let mut args: Vec<String> = vec!["report".into()];
    args.extend(dirs.iter().map(|d| d.display().to_string()));
    args.extend(["--out".into(), work.join("c6-report").display().to_string()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    checked(pmlm(work, None, &argv), "report");
    let rows: Vec<ComparisonRow> = read_csv(&work.join("c6-report/comparison.csv")).unwrap();
    let mean = rows.iter().find(|r| r.seed == "mean").expect("mean row");
    let per_seed: Vec<String> = rows
        .iter()
        .filter(|r| r.seed != "mean")
        .map(|r| format!("{:+.4}", r.mlm_acc_gap))
        .collect();
    Verdict::new(
        6,
        "directional MLM degradation",
        rows.len() == 4 && mean.mlm_acc_gap <= 0.005,
        format!(
            "3 seeds at step {}: position minus baseline MLM accuracy {per_seed:?}, mean {:+.4} (limit +0.005); \
             mean steps-to-threshold ratio {}",
            rows[0].step.unwrap_or(0),
            mean.mlm_acc_gap,
            mean.steps_to_threshold_ratio.map_or("n/a".into(), |r| format!("{r:.3}"))
        ),
    )
}

// ---- 7 ---------------------------------------------------------------------

fn sweep_reproduction(work: &Path) -> Verdict {
    let mut files = Vec::new();
    for rerun in ["c7a", "c7b"] {
        let out = work.join(rerun);
        checked(
            pmlm(work, Some(&out), &["sweep", "reduced.json", "--pcts", "0.05,0.10,0.15", "--seeds", "3"]),
            "sweep",
        );
        files.push(subdirs(&out, "sweep-").pop().unwrap());
    }
    let a = fs::read(files[0].join("sweep.csv")).unwrap();
    let b = fs::read(files[1].join("sweep.csv")).unwrap();
    let rows = read_sweep_csv(&files[0].join("sweep.csv")).unwrap();
    let checks = fs::read_to_string(files[0].join("checks.txt")).unwrap();
    let violations: Vec<&str> = checks.lines().filter(|l| l.starts_with("violation")).collect();
    let means = pmlm_cli::sweep::seed_means(&rows);
    let pos: Vec<String> = means.iter().map(|(p, _, q)| format!("{p}:{q:.4}")).collect();
    let mlm: Vec<String> = means.iter().map(|(p, m, _)| format!("{p}:{m:.4}")).collect();
    Verdict::new(
        7,
        "sweep reproduction",
        rows.len() == 9 && a == b,
        format!(
            "{} rows, rerun byte-identical: {}; seed-mean pos_acc {pos:?}, mlm_acc {mlm:?}; monotonicity {}",
            rows.len(),
            a == b,
            if violations.is_empty() {
                "holds".to_string()
            } else {
                format!("violations (reported, not failed): {violations:?}")
            }
        ),
    )
}

// ---- 8 ---------------------------------------------------------------------

fn checkpoint_integrity(work: &Path) -> Verdict {
    let model = ModelConfig {
        hidden: 32,
        layers: 2,
        heads: 2,
        ffn_size: 64,
        max_positions: 32,
        mask_position_id: 32,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        seed: 8,
        total_steps: 60,
        eval_every: 10,
        eval_batches: 2,
        checkpoint_every: 30,
        phase1: PhaseConfig {
            seq_len: 16,
            steps: None,
            batch_size: 4,
        },
        phase2: PhaseConfig {
            seq_len: 32,
            steps: None,
            batch_size: 4,
        },
        ..TrainConfig::default()
    };
    let corpus = Corpus::build(&synthetic_corpus(600, 8), model.vocab_size).unwrap();
    let mut at_k: Option<Checkpoint> = None;
    let full = run_pretraining(&model, &config, &corpus, Mode::Position, &mut |e| {
        if let Event::Checkpoint(ck) = e {
            at_k = Some(ck.clone());
        }
        Ok(())
    })
    .unwrap();
    let ck = at_k.expect("checkpoint at step 30");
    let path = work.join("c8.pmlm");
    save_checkpoint(&path, &ck).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let examples = make_examples(&corpus.stream[..200], 32).unwrap();
    let probe = assemble_batch(
        &examples[..4],
        &MaskingConfig::default(),
        ck.weights.config.vocab_size,
        32,
        MaskStreams::eval(8, 0),
    )
    .unwrap();
    let forward = |w: &ModelWeights<f32>| {
        let mut tape = Tape::new();
        let out = pretrain_forward(&mut tape, w, &probe, &mut ForwardOptions::eval()).unwrap();
        let mut v = vec![tape.value(out.sequence_output).clone(), tape.value(out.mlm_logits).clone()];
        v.extend(out.pos_logits.map(|p| tape.value(p).clone()));
        v
    };
    let (fa, fb) = (forward(&ck.weights), forward(&loaded.weights));
    let forward_ok = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(a, b)| a.bit_eq(b));

    let resumed = Trainer::resume(loaded, &corpus.stream).unwrap().run(&mut |_| Ok(())).unwrap();
    let tail: Vec<MetricsRecord> = full.metrics.iter().filter(|m| m.step > 30).cloned().collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_metrics(&mut a, &tail).unwrap();
    write_metrics(&mut b, &resumed.metrics).unwrap();
    let metrics_ok = !tail.is_empty() && a == b;
    let final_ok = resumed.checkpoint.bit_eq(&full.checkpoint);
    Verdict::new(
        8,
        "checkpoint integrity",
        forward_ok && metrics_ok && final_ok,
        format!(
            "probe forward after save/load bit-identical: {forward_ok}; resume at step 30 of 60: metrics bytes identical: \
             {metrics_ok} ({} rows), final state identical: {final_ok}",
            tail.len()
        ),
    )
}

// ---- 9 ---------------------------------------------------------------------

fn finetune_instrumentation(work: &Path, checkpoint: &Path) -> Verdict {
    let base = r#"{"finetune": {"epochs": 1, "train_size": 400, "dev_size": 200, "probe_size": 16}, "paths": {"out_dir": "c9"}}"#;
    fs::write(work.join("ft.json"), base).unwrap();
    fs::write(
        work.join("ft0.json"),
        base.replace(r#""probe_size": 16"#, r#""probe_size": 16, "attention_dropout": 0.0"#),
    )
    .unwrap();
    let ck = checkpoint.display().to_string();
    fs::create_dir_all(work.join("c9")).unwrap();
    let mut dirs = Vec::new();
    for cfg in ["ft.json", "ft0.json"] {
        let before: BTreeSet<PathBuf> = subdirs(&work.join("c9"), "").into_iter().collect();
        checked(
            pmlm(work, None, &["finetune", cfg, "--checkpoint", &ck, "--dropout-grad", "both", "--seeds", "3"]),
            "finetune",
        );
        let after: Vec<PathBuf> = subdirs(&work.join("c9"), "").into_iter().filter(|d| !before.contains(d)).collect();
        dirs.push(after.into_iter().next().expect("new finetune directory"));
    }
    let summary: Vec<SummaryRow> = read_csv(&dirs[0].join("summary.csv")).unwrap();
    let probes: Vec<ProbeRow> = read_csv(&dirs[0].join("probe.csv")).unwrap();
    let mut identical = true;
    for seed in 0..3 {
        for f in ["span_metrics.csv", "predictions.csv"] {
            let a = fs::read(dirs[1].join(format!("standard-seed{seed}")).join(f)).unwrap();
            let b = fs::read(dirs[1].join(format!("straight-through-seed{seed}")).join(f)).unwrap();
            identical &= a == b;
        }
    }
    assert!(identical, "with attention dropout 0 the two dropout gradient modes must be bit-identical");
    let f1: Vec<String> = summary
        .iter()
        .map(|r| format!("s{}/{}:{:.3}", r.seed, r.dropout_grad.as_str(), r.f1))
        .collect();
    let ratios: Vec<String> = probes.iter().map(|p| format!("{:.3}", p.ratio)).collect();
    let higher = probes.iter().filter(|p| p.higher_without_dropout).count();
    Verdict::new(
        9,
        "fine-tune instrumentation",
        summary.len() == 6 && probes.len() == 3 && identical,
        format!(
            "{} summary rows, dev F1 {f1:?}; softmax-gradient ratio straight-through/standard at p_attn {} {ratios:?} \
             ({higher}/3 above 1); p_attn=0 outputs bit-identical across modes: {identical}",
            summary.len(),
            probes.first().map_or(0.0, |p| p.attention_dropout)
        ),
    )
}

// ---- 10 --------------------------------------------------------------------

/// Hand-picked (prediction, gold) spans; predictions may be reversed.
const SPAN_CASES: [((usize, usize), (usize, usize)); 50] = [
    ((4, 4), (4, 4)),
    ((4, 6), (4, 6)),
    ((4, 8), (4, 8)),
    ((5, 7), (4, 8)),
    ((4, 8), (5, 7)),
    ((4, 5), (6, 7)),
    ((6, 7), (4, 5)),
    ((4, 5), (5, 6)),
    ((5, 6), (4, 5)),
    ((4, 4), (4, 8)),
    ((8, 8), (4, 8)),
    ((4, 8), (8, 8)),
    ((10, 12), (4, 6)),
    ((3, 3), (4, 4)),
    ((6, 4), (4, 6)),
    ((8, 5), (4, 6)),
    ((9, 4), (4, 8)),
    ((7, 7), (7, 11)),
    ((7, 11), (7, 7)),
    ((7, 9), (8, 11)),
    ((8, 11), (7, 9)),
    ((4, 20), (10, 12)),
    ((10, 12), (4, 20)),
    ((12, 10), (10, 12)),
    ((5, 5), (6, 6)),
    ((1, 2), (2, 3)),
    ((1, 1), (1, 1)),
    ((0, 0), (4, 5)),
    ((0, 30), (4, 5)),
    ((4, 5), (0, 30)),
    ((15, 19), (15, 19)),
    ((15, 19), (16, 19)),
    ((15, 19), (15, 18)),
    ((16, 18), (15, 19)),
    ((19, 15), (15, 19)),
    ((20, 24), (15, 19)),
    ((19, 24), (15, 19)),
    ((11, 13), (12, 16)),
    ((12, 16), (11, 13)),
    ((6, 9), (5, 9)),
    ((5, 9), (6, 9)),
    ((5, 8), (6, 9)),
    ((13, 13), (12, 14)),
    ((12, 14), (13, 13)),
    ((2, 7), (3, 5)),
    ((25, 27), (24, 28)),
    ((28, 24), (24, 28)),
    ((30, 30), (29, 30)),
    ((29, 31), (31, 31)),
    ((9, 9), (9, 10)),
];

fn brute_force(pred: (usize, usize), gold: (usize, usize)) -> (f64, f64) {
    let p: BTreeSet<usize> = (pred.0..=pred.1).collect();
    let g: BTreeSet<usize> = (gold.0..=gold.1).collect();
    let em = if p == g { 1.0 } else { 0.0 };
    let common = p.intersection(&g).count();
    let f1 = if common == 0 {
        0.0
    } else {
        2.0 * common as f64 / (p.len() + g.len()) as f64
    };
    (em, f1)
}

fn em_f1_correctness() -> Verdict {
    let examples: Vec<SpanExample> = SPAN_CASES
        .iter()
        .map(|&(_, (s, e))| SpanExample {
            ids: vec![0; 40],
            key: 0,
            span_len: e - s + 1,
            start: s,
            end: e,
        })
        .collect();
    let preds: Vec<(usize, usize)> = SPAN_CASES.iter().map(|&((s, e), _)| predict_span(s, e)).collect();
    let rows = score_predictions(&examples, &preds);
    let (mut em_bad, mut f1_bad, mut order_bad, mut max_diff) = (0, 0, 0, 0.0f64);
    let (mut em_sum, mut f1_sum) = (0.0, 0.0);
    for (row, &((s, e), gold)) in rows.iter().zip(&SPAN_CASES) {
        let (em, f1) = brute_force((s.min(e), s.max(e)), gold);
        em_sum += em;
        f1_sum += f1;
        em_bad += usize::from(row.em != em);
        let d = (row.f1 - f1).abs();
        max_diff = max_diff.max(d);
        f1_bad += usize::from(d > f64::EPSILON);
        order_bad += usize::from(row.f1 < row.em);
    }
    let agg = aggregate(&rows);
    let agg_ok = agg.count == 50
        && (agg.exact_match - em_sum / 50.0).abs() <= f64::EPSILON
        && (agg.f1 - f1_sum / 50.0).abs() <= f64::EPSILON;
    Verdict::new(
        10,
        "EM/F1 correctness",
        em_bad == 0 && f1_bad == 0 && order_bad == 0 && agg_ok,
        format!(
            "50 pairs: EM mismatches {em_bad}, F1 mismatches {f1_bad} (max |diff| {max_diff:.1e}), rows with f1 < em \
             {order_bad}; aggregate EM {:.4} F1 {:.4} matches: {agg_ok}",
            agg.exact_match, agg.f1
        ),
    )
}

fn report(v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {:>2} {}: {status} - {}", v.id, v.name, v.detail);
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    checked(pmlm(dir, None, &["gen-corpus", "--out", "corpus.txt", "--lines", "4000", "--seed", "0"]), "gen-corpus");
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut record = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };
    record(gradient_fidelity(dir));
    record(straight_through_contract());
    record(masking_statistics());
    record(baseline_equivalence());
    let (v5, checkpoint) = toy_convergence(dir);
    record(v5);
    record(mlm_degradation(dir));
    record(sweep_reproduction(dir));
    record(checkpoint_integrity(dir));
    record(finetune_instrumentation(dir, &checkpoint));
    record(em_f1_correctness());

    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass in {:.0}s",
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    let mut unexpected = Vec::new();
    for v in verdicts.iter().filter(|v| !v.pass) {
        if KNOWN_UNATTAINABLE.contains(&v.id) && v.expected_failure {
            println!("criterion {} fails for its documented reason only", v.id);
        } else {
            unexpected.push(v.id);
        }
    }
    for v in verdicts.iter().filter(|v| v.pass && KNOWN_UNATTAINABLE.contains(&v.id)) {
        println!("criterion {} is listed as unattainable but passed", v.id);
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
