use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use pmlm::training::Mode;
use serde::{Deserialize, Serialize};

use crate::config::{hash8, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pretrain::{load_corpus, pretrain_into, run_id};
use crate::report::steps_to_threshold;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKS_FILE: &str = "checks.txt";

/// Grid of position-masking percentages, each trained with `seeds`
/// consecutive seeds starting from the config seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub pcts: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            pcts: vec![0.05, 0.10, 0.15],
            seeds: 3,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> CliResult<()> {
        if self.pcts.is_empty() {
            return Err(CliError::input("sweep needs at least one percentage"));
        }
        if let Some(p) = self.pcts.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(CliError::input(format!("sweep percentage {p} is outside (0, 1]")));
        }
        if self.seeds == 0 {
            return Err(CliError::input("sweep needs at least one seed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pct: f64,
    pub seed: u64,
    pub final_mlm_acc: f64,
    pub final_pos_acc: f64,
    pub final_total_loss: f64,
    pub steps_to_threshold: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub violations: Vec<String>,
}

/// Seed-averaged accuracies per percentage, in ascending percentage order.
pub fn seed_means(rows: &[SweepRow]) -> Vec<(f64, f64, f64)> {
    let mut pcts: Vec<f64> = rows.iter().map(|r| r.pct).collect();
    pcts.sort_by(f64::total_cmp);
    pcts.dedup();
    pcts.into_iter()
        .map(|p| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.pct == p).collect();
            let n = group.len() as f64;
            let mlm = group.iter().map(|r| r.final_mlm_acc).sum::<f64>() / n;
            let pos = group.iter().map(|r| r.final_pos_acc).sum::<f64>() / n;
            (p, mlm, pos)
        })
        .collect()
}

/// Places where a seed-averaged accuracy rises as the percentage grows.
pub fn monotonicity_violations(rows: &[SweepRow]) -> Vec<String> {
    let means = seed_means(rows);
    let mut out = Vec::new();
    for w in means.windows(2) {
        let ((p0, m0, q0), (p1, m1, q1)) = (w[0], w[1]);
        if q1 > q0 {
            out.push(format!("pos_acc rises from {q0:.6} at pct {p0} to {q1:.6} at pct {p1}"));
        }
        if m1 > m0 {
            out.push(format!("mlm_acc rises from {m0:.6} at pct {p0} to {m1:.6} at pct {p1}"));
        }
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::io(path, e))).collect()
}

/// Runs every (pct, seed) point in position mode, `jobs` at a time, and
/// writes `sweep.csv` once all have finished.
pub fn run_sweep(config: &RunConfig, spec: &SweepSpec, jobs: usize) -> CliResult<SweepOutcome> {
    spec.validate()?;
    let corpus = load_corpus(config)?;
    let mut doc = config.to_value();
    doc["paths"]["out_dir"] = serde_json::Value::String(String::new());
    let key = serde_json::json!({ "config": doc, "sweep": spec });
    let dir = config.paths.out_dir.join(format!("sweep-{}", hash8(key.to_string().as_bytes())));
    let points: Vec<RunConfig> = spec
        .pcts
        .iter()
        .flat_map(|&pct| {
            (0..spec.seeds as u64).map(move |i| {
                let mut c = config.clone();
                c.masking.position_mask_pct = pct;
                c.train.seed = config.train.seed + i;
                c
            })
        })
        .collect();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    config.save(&dir.join("config.json"))?;

    let results: Mutex<Vec<Option<CliResult<SweepRow>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, points.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = points.get(i) else { break };
                let pct = point.masking.position_mask_pct;
                let point_dir = dir.join("points").join(run_id(point, Mode::Position));
                let res = pretrain_into(point, &corpus, Mode::Position, &point_dir, &mut |_| {}).map(|outcome| {
                    let last = outcome.metrics.last();
                    SweepRow {
                        pct,
                        seed: point.train.seed,
                        final_mlm_acc: last.map_or(0.0, |m| m.mlm_accuracy),
                        final_pos_acc: last.map_or(0.0, |m| m.pos_accuracy),
                        final_total_loss: last.map_or(0.0, |m| m.total_loss),
                        steps_to_threshold: steps_to_threshold(&outcome.metrics),
                    }
                });
                match &res {
                    Ok(r) => println!(
                        "pct {pct} seed {}: mlm_acc {:.4} pos_acc {:.4}",
                        r.seed, r.final_mlm_acc, r.final_pos_acc
                    ),
                    Err(e) => eprintln!("pct {pct} seed {}: {e}", point.train.seed),
                }
                results.lock().expect("no panics while holding the lock")[i] = Some(res);
            });
        }
    });

    let mut rows = Vec::with_capacity(points.len());
    for r in results.into_inner().expect("workers finished") {
        rows.push(r.expect("every point ran")?);
    }
    write_sweep_csv(&dir.join(SWEEP_FILE), &rows)?;
    let violations = monotonicity_violations(&rows);
    let mut checks = String::new();
    for (p, m, q) in seed_means(&rows) {
        checks.push_str(&format!("pct {p}: mean mlm_acc {m:.6} mean pos_acc {q:.6}\n"));
    }
    if violations.is_empty() {
        checks.push_str("accuracy is nonincreasing in pct\n");
    }
    for v in &violations {
        checks.push_str(&format!("violation: {v}\n"));
    }
    let checks_path = dir.join(CHECKS_FILE);
    fs::write(&checks_path, &checks).map_err(|e| CliError::io(&checks_path, e))?;
    Ok(SweepOutcome { dir, rows, violations })
}

pub fn cmd_sweep(config_path: &Path, spec: &SweepSpec, seed: Option<u64>, jobs: usize) -> CliResult<PathBuf> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    let outcome = run_sweep(&config, spec, jobs)?;
    print!("{}", fs::read_to_string(outcome.dir.join(CHECKS_FILE)).unwrap_or_default());
    println!("{} rows written to {}", outcome.rows.len(), outcome.dir.join(SWEEP_FILE).display());
    Ok(outcome.dir)
}
