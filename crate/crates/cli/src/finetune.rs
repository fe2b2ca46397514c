use std::fs;
use std::path::{Path, PathBuf};

use pmlm::autograd::DropoutMode;
use pmlm::finetune::{
    generate_span_dataset, probe_softmax_gradients, run_finetune, write_predictions, FinetuneConfig, FinetuneOutcome,
};
use pmlm::training::decode_checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::{hash8, RunConfig};
use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const SPAN_METRICS_FILE: &str = "span_metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Attention-dropout backward rules to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DropoutGrad {
    Standard,
    StraightThrough,
    Both,
}

impl DropoutGrad {
    pub fn modes(self) -> Vec<DropoutMode> {
        match self {
            DropoutGrad::Standard => vec![DropoutMode::Standard],
            DropoutGrad::StraightThrough => vec![DropoutMode::StraightThrough],
            DropoutGrad::Both => vec![DropoutMode::Standard, DropoutMode::StraightThrough],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub exact_match: f64,
    pub f1: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub dropout_grad: DropoutMode,
    pub attention_dropout: f64,
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub exact_match: f64,
    pub f1: f64,
}

/// Softmax-output gradient norms from the pretrained weights. The ratio is
/// straight-through over standard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub seed: u64,
    pub attention_dropout: f64,
    pub standard_norm: f64,
    pub straight_through_norm: f64,
    pub ratio: f64,
    pub higher_without_dropout: bool,
}

pub fn run_dir_name(mode: DropoutMode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.as_str())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::io(path, e))).collect()
}

fn write_outcome(dir: &Path, outcome: &FinetuneOutcome) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let rows: Vec<EpochRow> = outcome
        .epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            exact_match: e.metrics.exact_match,
            f1: e.metrics.f1,
            count: e.metrics.count,
        })
        .collect();
    write_csv(&dir.join(SPAN_METRICS_FILE), &rows)?;
    let path = dir.join(PREDICTIONS_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_predictions(file, &outcome.predictions)?;
    Ok(())
}

/// Fine-tunes the checkpoint once per (seed, mode) and probes softmax
/// gradients once per seed. Returns the output directory.
pub fn cmd_finetune(
    config_path: &Path,
    checkpoint: &Path,
    grad: DropoutGrad,
    seed: Option<u64>,
    seeds: usize,
) -> CliResult<PathBuf> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        config.finetune.seed = s;
    }
    if seeds == 0 {
        return Err(CliError::input("--seeds must be at least 1"));
    }
    let bytes = fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let ck = decode_checkpoint(&bytes).map_err(|e| CliError::input(format!("{}: {e}", checkpoint.display())))?;
    let weights = ck.weights;

    let key = format!("{}:{}:{grad:?}:{seeds}", config.hash8(), hash8(&bytes));
    let first = config.finetune.seed;
    let dir = config
        .paths
        .out_dir
        .join(format!("finetune-seed{first}-{}", hash8(key.as_bytes())));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    config.save(&dir.join("config.json"))?;

    let p_attn = config.finetune.attention_dropout.unwrap_or(weights.config.attention_dropout);
    let mut summary = Vec::new();
    let mut probes = Vec::new();
    for s in first..first + seeds as u64 {
        for mode in grad.modes() {
            let fc = FinetuneConfig {
                seed: s,
                dropout_gradient_mode: mode,
                ..config.finetune.clone()
            };
            let outcome = run_finetune(&weights, &fc)?;
            write_outcome(&dir.join(run_dir_name(mode, s)), &outcome)?;
            let last = outcome.epochs.last().expect("epoch 0 is always reported");
            println!(
                "seed {s} {}: exact_match {:.4} f1 {:.4}",
                mode.as_str(),
                last.metrics.exact_match,
                last.metrics.f1
            );
            summary.push(SummaryRow {
                seed: s,
                dropout_grad: mode,
                attention_dropout: p_attn,
                epochs: fc.epochs,
                final_train_loss: last.train_loss,
                exact_match: last.metrics.exact_match,
                f1: last.metrics.f1,
            });
        }
        let (_, probe_set) = generate_span_dataset(
            s,
            config.finetune.seq_len,
            weights.config.vocab_size,
            0,
            config.finetune.probe_size,
        )?;
        let probe = probe_softmax_gradients(&weights, &probe_set, p_attn, s)?;
        println!(
            "seed {s} softmax gradient norm: standard {:.6e} straight-through {:.6e} ratio {:.4}",
            probe.standard,
            probe.straight_through,
            probe.ratio()
        );
        probes.push(ProbeRow {
            seed: s,
            attention_dropout: p_attn,
            standard_norm: probe.standard,
            straight_through_norm: probe.straight_through,
            ratio: probe.ratio(),
            higher_without_dropout: probe.straight_through > probe.standard,
        });
    }
    write_csv(&dir.join(SUMMARY_FILE), &summary)?;
    write_csv(&dir.join(PROBE_FILE), &probes)?;
    println!("reference observation: softmax-output gradients are higher when dropout is not applied in the backward pass (ratio > 1)");
    println!("outputs in {}", dir.display());
    Ok(dir)
}
