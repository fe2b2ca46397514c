use std::fs;
use std::path::{Path, PathBuf};

use pmlm::masking::{read_corpus_lines, Corpus, Vocab};
use pmlm::training::{run_pretraining, save_checkpoint, Event, MetricsRecord, MetricsWriter, Mode, PretrainOutcome};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_FILE: &str = "run.json";
pub const FINAL_CHECKPOINT: &str = "final.pmlm";

/// Identity of a pretraining run, stored as `run.json` in its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub seq_len: usize,
    pub vocab_size: usize,
}

impl RunInfo {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn run_id(config: &RunConfig, mode: Mode) -> String {
    format!("{mode}-seed{}-{}", config.train.seed, config.hash8())
}

pub fn load_corpus(config: &RunConfig) -> CliResult<Corpus> {
    let path = config
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::input("paths.corpus is not set; it must name a text file with one document per line"))?;
    let lines = read_corpus_lines(path).map_err(|e| CliError::input(format!("paths.corpus: {e}")))?;
    let vocab = match &config.paths.vocab {
        Some(v) => Vocab::load(v).map_err(|e| CliError::input(format!("paths.vocab ({}): {e}", v.display())))?,
        None => Vocab::build(lines.iter().map(String::as_str), config.model.vocab_size)?,
    };
    Ok(Corpus::from_lines(&lines, vocab)?)
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-step{step:06}.pmlm")
}

/// Pretrains into `dir`: config, vocabulary, streamed metrics, intermediate
/// checkpoints and `final.pmlm`. On divergence the metrics written so far
/// stay on disk.
pub fn pretrain_into(
    config: &RunConfig,
    corpus: &Corpus,
    mode: Mode,
    dir: &Path,
    on_metrics: &mut dyn FnMut(&MetricsRecord),
) -> CliResult<PretrainOutcome> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    config.save(&dir.join("config.json"))?;
    corpus.vocab.save(&dir.join("vocab.txt"))?;
    let info = RunInfo {
        run_id: dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        mode,
        seed: config.train.seed,
        seq_len: config.train.phase2.seq_len,
        vocab_size: corpus.vocab.len(),
    };
    let run_path = dir.join(RUN_FILE);
    let json = serde_json::to_string_pretty(&info).expect("run info serializes") + "\n";
    fs::write(&run_path, json).map_err(|e| CliError::io(&run_path, e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = fs::File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut writer = MetricsWriter::new(file)?;
    let outcome = run_pretraining(&config.model, &config.train_config(), corpus, mode, &mut |event| {
        match event {
            Event::Metrics(rec) => {
                writer.write(rec)?;
                on_metrics(rec);
            }
            Event::Checkpoint(ck) => save_checkpoint(&dir.join(checkpoint_name(ck.counters.step)), ck)?,
        }
        Ok(())
    })?;
    save_checkpoint(&dir.join(FINAL_CHECKPOINT), &outcome.checkpoint)?;
    Ok(outcome)
}

pub fn cmd_pretrain(config_path: &Path, mode: Mode, seed: Option<u64>) -> CliResult<PathBuf> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    let corpus = load_corpus(&config)?;
    let id = run_id(&config, mode);
    let dir = config.paths.out_dir.join(&id);
    println!("run {id}: {} tokens, vocabulary {}", corpus.stream.len(), corpus.vocab.len());
    let outcome = pretrain_into(&config, &corpus, mode, &dir, &mut |m| {
        println!(
            "step {:>6}  phase {}  lr {:.5}  loss {:.4}  mlm_acc {:.4}  pos_acc {:.4}",
            m.step, m.phase, m.lr, m.total_loss, m.mlm_accuracy, m.pos_accuracy
        );
    })?;
    println!("finished {} steps, outputs in {}", outcome.checkpoint.counters.step, dir.display());
    Ok(dir)
}
