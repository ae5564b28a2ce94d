use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over a flat parameter vector. SGD keeps only the step
/// counter; Adam adds first/second moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptState {
    pub fn new(kind: &OptimizerKind, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptState {
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
            OptimizerKind::Adam { .. } => OptState {
                step: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
        }
    }
}

/// In-place parameter update. Zero gradients leave parameters bit-identical
/// under both optimizers (Adam moments stay zero, so the update is zero).
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptState,
    kind: &OptimizerKind,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            format!("{} params", params.len()),
            format!("{} grads", grads.len()),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "optimizer gradients".into(),
        });
    }
    state.step += 1;
    match *kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            if state.m.len() != params.len() || state.v.len() != params.len() {
                return Err(Error::shape(
                    format!("{} params", params.len()),
                    format!("{} moment entries", state.m.len()),
                ));
            }
            let t = state.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
