use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pmlm::training::{read_metrics, MetricsRecord, Mode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::pretrain::{RunInfo, METRICS_FILE};

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const TABLE_FILE: &str = "table.txt";

/// Fraction of its own final MLM accuracy a run must reach.
pub const THRESHOLD_FRACTION: f64 = 0.9;

/// First evaluated step whose MLM accuracy reaches 90% of the run's final
/// MLM accuracy.
pub fn steps_to_threshold(records: &[MetricsRecord]) -> Option<u64> {
    let target = THRESHOLD_FRACTION * records.last()?.mlm_accuracy;
    records.iter().find(|r| r.mlm_accuracy >= target).map(|r| r.step)
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub metrics: Vec<MetricsRecord>,
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    let path = dir.join(METRICS_FILE);
    if !path.is_file() {
        return Err(CliError::input(format!("missing metrics file {}", path.display())));
    }
    let info = RunInfo::load(dir)?;
    let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let metrics = read_metrics(file).map_err(|e| CliError::io(&path, e))?;
    if metrics.is_empty() {
        return Err(CliError::input(format!("metrics file {} has no rows", path.display())));
    }
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        info,
        metrics,
    })
}

/// One baseline/position pair at their last common evaluation step. The
/// gap is position minus baseline; the ratio is position steps-to-threshold
/// over baseline steps-to-threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: String,
    pub baseline_run: String,
    pub position_run: String,
    pub step: Option<u64>,
    pub baseline_mlm_acc: f64,
    pub position_mlm_acc: f64,
    pub mlm_acc_gap: f64,
    pub baseline_pos_acc: f64,
    pub position_pos_acc: f64,
    pub baseline_steps_to_threshold: Option<f64>,
    pub position_steps_to_threshold: Option<f64>,
    pub steps_to_threshold_ratio: Option<f64>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        _ => None,
    }
}

fn compare(seed: u64, base: &LoadedRun, pos: &LoadedRun) -> CliResult<ComparisonRow> {
    let step = base
        .metrics
        .iter()
        .rev()
        .map(|r| r.step)
        .find(|s| pos.metrics.iter().any(|r| r.step == *s))
        .ok_or_else(|| {
            CliError::input(format!(
                "runs {} and {} share no evaluation step",
                base.info.run_id, pos.info.run_id
            ))
        })?;
    let at = |run: &LoadedRun| run.metrics.iter().find(|r| r.step == step).expect("common step").clone();
    let (b, p) = (at(base), at(pos));
    let bs = steps_to_threshold(&base.metrics).map(|s| s as f64);
    let ps = steps_to_threshold(&pos.metrics).map(|s| s as f64);
    Ok(ComparisonRow {
        seed: seed.to_string(),
        baseline_run: base.info.run_id.clone(),
        position_run: pos.info.run_id.clone(),
        step: Some(step),
        baseline_mlm_acc: b.mlm_accuracy,
        position_mlm_acc: p.mlm_accuracy,
        mlm_acc_gap: p.mlm_accuracy - b.mlm_accuracy,
        baseline_pos_acc: b.pos_accuracy,
        position_pos_acc: p.pos_accuracy,
        baseline_steps_to_threshold: bs,
        position_steps_to_threshold: ps,
        steps_to_threshold_ratio: ratio(ps, bs),
    })
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_row(rows: &[ComparisonRow]) -> ComparisonRow {
    let n = rows.len() as f64;
    let mean = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ComparisonRow {
        seed: "mean".into(),
        baseline_run: String::new(),
        position_run: String::new(),
        step: None,
        baseline_mlm_acc: mean(|r| r.baseline_mlm_acc),
        position_mlm_acc: mean(|r| r.position_mlm_acc),
        mlm_acc_gap: mean(|r| r.mlm_acc_gap),
        baseline_pos_acc: mean(|r| r.baseline_pos_acc),
        position_pos_acc: mean(|r| r.position_pos_acc),
        baseline_steps_to_threshold: mean_opt(rows.iter().map(|r| r.baseline_steps_to_threshold)),
        position_steps_to_threshold: mean_opt(rows.iter().map(|r| r.position_steps_to_threshold)),
        steps_to_threshold_ratio: mean_opt(rows.iter().map(|r| r.steps_to_threshold_ratio)),
    }
}

/// Pairs baseline and position runs by seed. Seeds with only one mode are
/// skipped; a mean row follows when there are at least two pairs.
pub fn comparison_rows(runs: &[LoadedRun]) -> CliResult<Vec<ComparisonRow>> {
    let mut by_seed: BTreeMap<u64, (Option<&LoadedRun>, Option<&LoadedRun>)> = BTreeMap::new();
    for run in runs {
        let slot = by_seed.entry(run.info.seed).or_default();
        let side = match run.info.mode {
            Mode::Baseline => &mut slot.0,
            Mode::Position => &mut slot.1,
        };
        if let Some(prev) = side {
            return Err(CliError::input(format!(
                "two {} runs with seed {}: {} and {}",
                run.info.mode,
                run.info.seed,
                prev.dir.display(),
                run.dir.display()
            )));
        }
        *side = Some(run);
    }
    let mut rows = Vec::new();
    for (seed, pair) in by_seed {
        match pair {
            (Some(b), Some(p)) => rows.push(compare(seed, b, p)?),
            _ => println!("seed {seed} has no baseline/position pair, skipped"),
        }
    }
    if rows.len() >= 2 {
        rows.push(mean_row(&rows));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub run: String,
    pub mode: Mode,
    pub seed: u64,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

/// Every metric of every run in long format.
pub fn curve_points(runs: &[LoadedRun]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for run in runs {
        for r in &run.metrics {
            let values = [
                ("lr", r.lr),
                ("total_loss", r.total_loss),
                ("mlm_loss", r.mlm_loss),
                ("pos_loss", r.pos_loss),
                ("mlm_acc", r.mlm_accuracy),
                ("pos_acc", r.pos_accuracy),
                ("tokens_seen", r.tokens_seen as f64),
            ];
            out.extend(values.into_iter().map(|(metric, value)| CurvePoint {
                run: run.info.run_id.clone(),
                mode: run.info.mode,
                seed: run.info.seed,
                step: r.step,
                metric: metric.into(),
                value,
            }));
        }
    }
    out
}

/// Reference SQuAD F1 for BERT base at sequence length 384, followed by the
/// seed-averaged desk-scale results in the same layout.
pub fn render_table(runs: &[LoadedRun]) -> String {
    let mut t = String::new();
    t.push_str("GPU phase 2 bert base performance\n");
    t.push_str("(paper-scale reference, not reproduced)\n\n");
    let _ = writeln!(t, "{:<16}Squad v1.1 F1", "Name");
    let _ = writeln!(t, "{:<16}87.99", "Base 384");
    let _ = writeln!(t, "{:<16}88.26", "Position 384");
    t.push_str("\nDesk-scale pretraining (final evaluation, mean over seeds)\n\n");
    let _ = writeln!(
        t,
        "{:<16}{:<7}{:<10}{:<10}Steps to 90% of final MLM acc",
        "Name", "Seeds", "MLM acc", "Pos acc"
    );
    for (mode, label) in [(Mode::Baseline, "Base"), (Mode::Position, "Position")] {
        let group: Vec<&LoadedRun> = runs.iter().filter(|r| r.info.mode == mode).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let last = |r: &&LoadedRun| r.metrics.last().cloned().expect("non-empty metrics");
        let mlm = group.iter().map(|r| last(r).mlm_accuracy).sum::<f64>() / n;
        let pos = group.iter().map(|r| last(r).pos_accuracy).sum::<f64>() / n;
        let steps = mean_opt(group.iter().map(|r| steps_to_threshold(&r.metrics).map(|s| s as f64)));
        let name = format!("{label} {}", group[0].info.seq_len);
        let steps = steps.map_or_else(|| "-".to_string(), |s| format!("{s:.0}"));
        let _ = writeln!(t, "{name:<16}{:<7}{mlm:<10.4}{pos:<10.4}{steps}", group.len());
    }
    t
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> CliResult<Vec<ComparisonRow>> {
    if run_dirs.is_empty() {
        return Err(CliError::input("report needs at least one run directory"));
    }
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
    let rows = comparison_rows(&runs)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_csv(&out.join(COMPARISON_FILE), &rows)?;
    write_csv(&out.join(CURVES_FILE), &curve_points(&runs))?;
    let table = render_table(&runs);
    let table_path = out.join(TABLE_FILE);
    fs::write(&table_path, &table).map_err(|e| CliError::io(&table_path, e))?;
    print!("{table}");
    for r in &rows {
        println!("seed {}: mlm_acc gap (position - baseline) {:+.4}", r.seed, r.mlm_acc_gap);
    }
    println!("report written to {}", out.display());
    Ok(rows)
}
