//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Most coordinates probed per parameter tensor.
pub const MAX_COORDS_PER_PARAM: usize = 64;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    /// Largest `|a|` and `|n|` over the probed coordinates.
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Loss at the unperturbed point.
    pub loss: f64,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn evaluate<F>(loss_fn: &mut F, params: &ParamStore<f64>) -> Result<(Tape<f64>, Var)>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = loss_fn(params, &mut tape)?;
    Ok((tape, root))
}

/// Compares tape gradients of `loss_fn` against `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// `loss_fn` must be deterministic: any stochastic op inside it has to use a
/// fixed mask or a freshly seeded generator on every call. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParamStore<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    params.zero_grad();
    let (tape, root) = evaluate(&mut loss_fn, params)?;
    let f0 = tape.scalar(root);
    tape.backward(root, params)?;
    drop(tape);

    let (tape, root) = evaluate(&mut loss_fn, params)?;
    let f_again = tape.scalar(root);
    drop(tape);
    if f0.to_bits() != f_again.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss changed between identical evaluations ({f0} vs {f_again}); freeze all stochastic ops"
        )));
    }

    let mut coord_rng = stream_rng(0, Stream::WeightInit, u64::MAX);
    let mut per_param = Vec::with_capacity(params.len());
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).value.numel();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_PARAM {
            (0..n).collect()
        } else {
            let mut c = sample(&mut coord_rng, n, MAX_COORDS_PER_PARAM).into_vec();
            c.sort_unstable();
            c
        };
        let (mut worst, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &coords {
            let analytic = params.get(id).grad.data()[i];
            let orig = params.get(id).value.data()[i];

            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let (t, r) = evaluate(&mut loss_fn, params)?;
            let f_plus = t.scalar(r);
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let (t, r) = evaluate(&mut loss_fn, params)?;
            let f_minus = t.scalar(r);
            params.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
            max_a = max_a.max(analytic.abs());
            max_n = max_n.max(numeric.abs());
        }
        per_param.push(ParamCheck {
            name: params.get(id).name.clone(),
            coords: coords.len(),
            max_rel_error: worst,
            max_abs_analytic: max_a,
            max_abs_numeric: max_n,
        });
    }

    let (worst_param, max_rel_error) = per_param
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .map(|p| (p.name.clone(), p.max_rel_error))
        .unwrap_or_default();
    Ok(GradCheckReport {
        loss: f0,
        max_rel_error,
        worst_param,
        per_param,
    })
}
