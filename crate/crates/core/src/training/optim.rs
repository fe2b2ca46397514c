use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear warmup from 0 to `lr_peak` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
pub fn lr_at_step(step: u64, total_steps: u64, warmup_steps: u64, lr_peak: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr_peak * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return if step == warmup_steps { lr_peak } else { 0.0 };
    }
    lr_peak * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
}

/// Momentum buffers, one per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn zeros(params: &ParamStore<f32>) -> Self {
        Self {
            momentum: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn check(&self, params: &ParamStore<f32>) -> Result<()> {
        if self.momentum.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer has {} buffers for {} parameters",
                self.momentum.len(),
                params.len()
            )));
        }
        for (m, p) in self.momentum.iter().zip(params.iter()) {
            if m.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "momentum buffer for {} has shape {:?}, parameter has {:?}",
                    p.name,
                    m.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.momentum.len() == other.momentum.len()
            && self.momentum.iter().zip(&other.momentum).all(|(a, b)| a.bit_eq(b))
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v`, then clears the gradients.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient leaves parameters and buffers untouched.
pub fn sgd_step(params: &mut ParamStore<f32>, state: &mut OptimizerState, lr: f64, momentum: f64) -> Result<()> {
    state.check(params)?;
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite {
            op: format!("gradient of {}", p.name),
        });
    }
    let (lr, mu) = (lr as f32, momentum as f32);
    for (p, v) in params.iter_mut().zip(state.momentum.iter_mut()) {
        for ((theta, g), m) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.data_mut()) {
            *m = mu * *m + *g;
            *theta -= lr * *m;
        }
    }
    params.zero_grad();
    Ok(())
}
