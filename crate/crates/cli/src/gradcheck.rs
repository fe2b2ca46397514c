use std::collections::BTreeMap;

use pmlm::autograd::{grad_check, DropoutMode, Fault, GradCheckReport, ParamCheck, ParamStore, Tape};
use pmlm::finetune::span_head_forward;
use pmlm::masking::{assemble_batch, make_examples, MaskStreams, MaskedBatch, MaskingConfig, FIRST_WORD_ID};
use pmlm::model::{pretrain_forward, Bound, ForwardOptions, ModelConfig, ModelWeights, IGNORE_INDEX};
use pmlm::rng::{stream_rng, Stream};
use pmlm::tensor::Tensor;

use crate::error::{CliError, CliResult};

pub const TOLERANCE: f64 = 1e-4;
pub const SELF_TEST_TOLERANCE: f64 = 1e-9;
pub const EPS: f64 = 1e-5;

/// Initialisation scale for the check. Larger than the training default so
/// that no gradient is small enough for finite-difference round-off to
/// dominate.
const CHECK_INIT_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckSize {
    Tiny,
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    /// Largest relative error per parameter group, in parameter order.
    pub groups: Vec<(String, f64)>,
    pub report: GradCheckReport,
    pub self_test_error: f64,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE && self.self_test_error < SELF_TEST_TOLERANCE
    }

    /// Smallest derivative a central difference can resolve at this loss:
    /// four ulps of the loss over `2·eps`.
    pub fn resolution(&self) -> f64 {
        4.0 * f64::EPSILON * self.report.loss.abs() / (2.0 * EPS)
    }

    /// Failing parameters whose analytic and numeric gradients are both
    /// below the resolution, i.e. an exactly zero gradient measured as
    /// loss round-off. The attention key bias and the span bias are such
    /// parameters: shifting every score of a softmax row leaves it unchanged.
    pub fn below_resolution(&self) -> Vec<&ParamCheck> {
        let r = self.resolution();
        self.report
            .per_param
            .iter()
            .filter(|p| p.max_rel_error >= TOLERANCE && p.max_abs_analytic <= r && p.max_abs_numeric <= r)
            .collect()
    }

    /// Largest relative error over the parameters not in `below_resolution`.
    pub fn max_resolved_error(&self) -> f64 {
        let skip = self.below_resolution();
        self.report
            .per_param
            .iter()
            .filter(|p| !skip.iter().any(|s| s.name == p.name))
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `embeddings`, `encoder.layer{i}`, `heads.mlm`, `heads.position`, `heads.span`.
pub fn param_group(name: &str) -> &str {
    if name.starts_with("embeddings.") {
        return "embeddings";
    }
    match name.match_indices('.').nth(1) {
        Some((i, _)) => &name[..i],
        None => name,
    }
}

/// `½ θᵀAθ + bᵀθ` with symmetric `A`: central differences are exact up to
/// round-off, so this measures the checker itself.
pub fn quadratic_self_test() -> CliResult<f64> {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("theta", Tensor::new(vec![1, 4], vec![0.3, -0.7, 1.1, 0.2])?)?;
    let a: Vec<f64> = (0..16)
        .map(|k| {
            let (i, j) = (k / 4, k % 4);
            if i == j {
                2.0
            } else {
                0.25 * (i + j) as f64
            }
        })
        .collect();
    let a = Tensor::new(vec![4, 4], a)?;
    let b = Tensor::new(vec![1, 4], vec![0.5, -1.0, 0.25, 2.0])?;
    let report = grad_check(
        |p, tape| {
            let theta = tape.param(p, id)?;
            let am = tape.leaf(a.clone())?;
            let bv = tape.leaf(b.clone())?;
            let at = tape.matmul(theta, am)?;
            let quad = tape.mul(at, theta)?;
            let quad = tape.scale(quad, 0.5)?;
            let lin = tape.mul(bv, theta)?;
            let both = tape.add(quad, lin)?;
            tape.sum(both)
        },
        &mut store,
        EPS,
    )?;
    Ok(report.max_rel_error)
}

fn check_batch(config: &ModelConfig) -> CliResult<MaskedBatch> {
    let s = config.max_positions;
    let span = config.vocab_size - FIRST_WORD_ID;
    let stream: Vec<usize> = (0..3 * (s - 2)).map(|i| FIRST_WORD_ID + (i * 17 + 3) % span).collect();
    let examples = make_examples(&stream, s)?;
    Ok(assemble_batch(
        &examples,
        &MaskingConfig::default(),
        config.vocab_size,
        config.mask_position_id,
        MaskStreams::train(0, 0),
    )?)
}

/// Checks the tiny f64 model with MLM, position and span heads. The loss is
/// the pretraining total plus span cross-entropy on the same batch, with
/// dropout masks redrawn from a fixed seed on every evaluation.
pub fn run_gradcheck(size: CheckSize, fault: Option<Fault>) -> CliResult<GradcheckOutcome> {
    let CheckSize::Tiny = size;
    let config = ModelConfig {
        init_std: CHECK_INIT_STD,
        ..ModelConfig::tiny()
    };
    let mut weights = ModelWeights::<f64>::init(&config, 0)?;
    weights.add_span_head(0)?;
    let batch = check_batch(&config)?;
    let (b, s) = (batch.batch_size, batch.seq_len);
    let starts: Vec<i64> = (0..b).map(|i| (1 + i % (s - 2)) as i64).collect();
    let ends: Vec<i64> = starts.iter().map(|&x| x + 1).collect();
    let ids = weights.ids.clone();
    let model_config = weights.config.clone();

    let report = grad_check(
        |params, tape: &mut Tape<f64>| {
            if let Some(f) = fault {
                tape.inject_fault(f);
            }
            let w = ModelWeights {
                config: model_config.clone(),
                params: params.clone(),
                ids: ids.clone(),
            };
            let mut opts = ForwardOptions::train(stream_rng(0, Stream::Dropout, 0), DropoutMode::Standard);
            let out = pretrain_forward(tape, &w, &batch, &mut opts)?;
            let mut bound = Bound::new(&w);
            let (start, end) = span_head_forward(tape, &mut bound, out.sequence_output, b, s)?;
            let ls = tape.cross_entropy(start, &starts, IGNORE_INDEX)?;
            let le = tape.cross_entropy(end, &ends, IGNORE_INDEX)?;
            let span = tape.add(ls.var, le.var)?;
            let span = tape.scale(span, 0.5)?;
            tape.add(out.total, span)
        },
        &mut weights.params,
        EPS,
    )?;

    let mut groups: Vec<(String, f64)> = Vec::new();
    let mut index = BTreeMap::new();
    for p in &report.per_param {
        let g = param_group(&p.name).to_string();
        match index.get(&g) {
            Some(&i) => {
                let slot: &mut (String, f64) = &mut groups[i];
                slot.1 = slot.1.max(p.max_rel_error);
            }
            None => {
                index.insert(g.clone(), groups.len());
                groups.push((g, p.max_rel_error));
            }
        }
    }
    Ok(GradcheckOutcome {
        groups,
        report,
        self_test_error: quadratic_self_test()?,
    })
}

pub fn cmd_gradcheck(size: CheckSize, inject_bug: bool) -> CliResult<()> {
    let outcome = run_gradcheck(size, inject_bug.then_some(Fault::GeluGrad))?;
    println!("gradient check, tiny f64 model, eps {EPS:e}, tolerance {TOLERANCE:e}");
    for (group, err) in &outcome.groups {
        let flag = if *err < TOLERANCE { "ok" } else { "FAIL" };
        println!("{group:<18} max rel error {err:.3e}  {flag}");
    }
    println!(
        "worst parameter {} at {:.3e}",
        outcome.report.worst_param, outcome.report.max_rel_error
    );
    let below = outcome.below_resolution();
    if !below.is_empty() {
        println!(
            "finite-difference resolution at loss {:.6} is {:.2e}; these gradients are exactly zero and",
            outcome.report.loss,
            outcome.resolution()
        );
        println!("cannot be resolved by central differences at eps {EPS:e}:");
        for p in &below {
            println!(
                "  {:<28} |analytic| <= {:.1e}  |numeric| <= {:.1e}",
                p.name, p.max_abs_analytic, p.max_abs_numeric
            );
        }
        println!("max rel error over the remaining parameters {:.3e}", outcome.max_resolved_error());
    }
    println!("quadratic self-test max rel error {:.3e}", outcome.self_test_error);
    if outcome.passed() {
        println!("gradient check passed");
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {:.3e} in {} (self-test {:.3e})",
            outcome.report.max_rel_error, outcome.report.worst_param, outcome.self_test_error
        )))
    }
}
