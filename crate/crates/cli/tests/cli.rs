use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmlm_cli::finetune::SummaryRow;
use pmlm_cli::sweep::read_sweep_csv;

fn pmlm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmlm"))
        .args(args)
        .current_dir(dir)
        .env_remove("PMLM_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: &str = r#"{
  "model": {"hidden": 16, "layers": 1, "heads": 2, "ffn_size": 32, "max_positions": 16, "mask_position_id": 16},
  "train": {"total_steps": 20, "eval_every": 10, "eval_batches": 2, "checkpoint_every": 10,
            "phase1": {"seq_len": 8, "batch_size": 4}, "phase2": {"seq_len": 16, "batch_size": 4}},
  "finetune": {"epochs": 1, "train_size": 32, "dev_size": 16, "seq_len": 12, "probe_size": 4, "batch_size": 8,
               "attention_dropout": 0.0},
  "paths": {"corpus": "corpus.txt", "out_dir": "out"}
}"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = pmlm(dir.path(), &["gen-corpus", "--out", "corpus.txt", "--lines", "300"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

fn only_subdir(dir: &Path, prefix: &str) -> PathBuf {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(found.len(), 1, "{found:?}");
    found.pop().unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn pretrain_writes_run_directory_and_is_repeatable() {
    let ws = workspace();
    let out = pmlm(ws.path(), &["pretrain", "small.json", "--mode", "position", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = only_subdir(&ws.path().join("out"), "position-seed4-");
    for f in ["config.json", "run.json", "metrics.csv", "vocab.txt", "final.pmlm", "checkpoint-step000010.pmlm"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let first = fs::read(run.join("metrics.csv")).unwrap();
    let header = String::from_utf8_lossy(&first).lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "step,phase,lr,total_loss,mlm_loss,pos_loss,mlm_acc,pos_acc,tokens_seen,wall_seconds,seed"
    );
    assert_eq!(column(&String::from_utf8_lossy(&first), "seed"), ["4", "4"]);

    let out = pmlm(ws.path(), &["pretrain", "small.json", "--mode", "position", "--seed", "4"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), first);
}

#[test]
fn baseline_pos_loss_column_is_zero() {
    let ws = workspace();
    let out = pmlm(ws.path(), &["pretrain", "small.json", "--mode", "baseline"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = only_subdir(&ws.path().join("out"), "baseline-seed0-");
    let text = fs::read_to_string(run.join("metrics.csv")).unwrap();
    for col in ["pos_loss", "pos_acc"] {
        assert!(column(&text, col).iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn out_dir_environment_override() {
    let ws = workspace();
    let alt = ws.path().join("alt");
    let out = Command::new(env!("CARGO_BIN_EXE_pmlm"))
        .args(["pretrain", "small.json"])
        .current_dir(ws.path())
        .env("PMLM_OUT", &alt)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    only_subdir(&alt, "position-seed0-");
    assert!(!ws.path().join("out").exists());
}

#[test]
fn missing_corpus_names_the_key() {
    let ws = workspace();
    fs::write(ws.path().join("nocorpus.json"), r#"{"paths": {"out_dir": "out"}}"#).unwrap();
    let out = pmlm(ws.path(), &["pretrain", "nocorpus.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("paths.corpus"), "{}", stderr(&out));

    fs::write(ws.path().join("gone.json"), r#"{"paths": {"corpus": "gone.txt"}}"#).unwrap();
    let out = pmlm(ws.path(), &["pretrain", "gone.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("paths.corpus"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_2() {
    let ws = workspace();
    fs::write(ws.path().join("bad.json"), r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let out = pmlm(ws.path(), &["pretrain", "bad.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown field"), "{}", stderr(&out));

    let out = pmlm(ws.path(), &["pretrain", "absent.json"]);
    assert_eq!(code(&out), 2);
    let out = pmlm(ws.path(), &["pretrain", "small.json", "--mode", "sideways"]);
    assert_eq!(code(&out), 2);
    let out = pmlm(ws.path(), &["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_3() {
    let ws = workspace();
    let cfg = SMALL.replace(r#""total_steps": 20"#, r#""total_steps": 200, "lr_peak": 1e30, "warmup_steps": 0"#);
    fs::write(ws.path().join("hot.json"), cfg).unwrap();
    let out = pmlm(ws.path(), &["pretrain", "hot.json"]);
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}

#[test]
fn finetune_modes_at_zero_attention_dropout_write_identical_files() {
    let ws = workspace();
    assert_eq!(code(&pmlm(ws.path(), &["pretrain", "small.json"])), 0);
    let run = only_subdir(&ws.path().join("out"), "position-seed0-");
    let ck = run.join("final.pmlm");
    let out = pmlm(
        ws.path(),
        &["finetune", "small.json", "--checkpoint", ck.to_str().unwrap(), "--dropout-grad", "both", "--seeds", "3"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ft = only_subdir(&ws.path().join("out"), "finetune-seed0-");
    let summary: Vec<SummaryRow> = pmlm_cli::finetune::read_csv(&ft.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 6);
    for seed in 0..3 {
        for f in ["span_metrics.csv", "predictions.csv"] {
            let a = fs::read(ft.join(format!("standard-seed{seed}")).join(f)).unwrap();
            let b = fs::read(ft.join(format!("straight-through-seed{seed}")).join(f)).unwrap();
            assert_eq!(a, b, "{f} differs for seed {seed}");
        }
    }
    let probe = fs::read_to_string(ft.join("probe.csv")).unwrap();
    assert_eq!(probe.lines().count(), 4);
    assert!(column(&probe, "ratio").iter().all(|r| r == "1.0"));
}

#[test]
fn finetune_rejects_a_foreign_checkpoint() {
    let ws = workspace();
    fs::write(ws.path().join("junk.pmlm"), b"JUNKJUNKJUNKJUNK").unwrap();
    let out = pmlm(ws.path(), &["finetune", "small.json", "--checkpoint", "junk.pmlm"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
    let out = pmlm(ws.path(), &["finetune", "small.json", "--checkpoint", "nothing.pmlm"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_point_sweep_has_one_row() {
    let ws = workspace();
    let out = pmlm(ws.path(), &["sweep", "small.json", "--pcts", "0.1", "--seeds", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = only_subdir(&ws.path().join("out"), "sweep-");
    let rows = read_sweep_csv(&dir.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].pct, rows[0].seed), (0.1, 0));

    let out = pmlm(ws.path(), &["sweep", "small.json", "--pcts", "0.1,1.5"]);
    assert_eq!(code(&out), 2);
    let out = pmlm(ws.path(), &["sweep", "small.json", "--pcts", "0.1,abc"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_pairs_runs_and_names_missing_files() {
    let ws = workspace();
    assert_eq!(code(&pmlm(ws.path(), &["pretrain", "small.json", "--mode", "baseline"])), 0);
    assert_eq!(code(&pmlm(ws.path(), &["pretrain", "small.json", "--mode", "position"])), 0);
    let base = only_subdir(&ws.path().join("out"), "baseline-");
    let pos = only_subdir(&ws.path().join("out"), "position-");
    let out = pmlm(
        ws.path(),
        &["report", base.to_str().unwrap(), pos.to_str().unwrap(), "--out", "rep"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cmp = fs::read_to_string(ws.path().join("rep/comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 2);
    let curves = fs::read_to_string(ws.path().join("rep/curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "run,mode,seed,step,metric,value");
    let table = fs::read_to_string(ws.path().join("rep/table.txt")).unwrap();
    assert!(table.contains("paper-scale reference, not reproduced"));

    fs::remove_file(pos.join("metrics.csv")).unwrap();
    let out = pmlm(ws.path(), &["report", base.to_str().unwrap(), pos.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(&pos.join("metrics.csv").display().to_string()), "{}", stderr(&out));
}

#[test]
fn gradcheck_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pmlm(dir.path(), &["gradcheck", "--size", "tiny", "--inject-bug"]);
    assert_ne!(code(&out), 0);
    assert_eq!(code(&out), 3);
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pmlm(dir.path(), &["--help"])), 0);
    assert!(!stdout(&pmlm(dir.path(), &["--help"])).contains("inject"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        pmlm_cli::RunConfig::from_json(&fs::read_to_string(&path).unwrap())
            .and_then(|c| c.validate().map(|_| c))
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 2);
}
