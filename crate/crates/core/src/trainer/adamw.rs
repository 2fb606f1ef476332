//! Adam optimizer with decoupled weight decay.

use super::TrainError;
use crate::model::ModelParams;
use crate::{Matrix, Real};

const BETA1: Real = 0.9;
const BETA2: Real = 0.999;
const EPS: Real = 1e-8;

/// First/second moment estimates plus the step counter, one moment pair per
/// parameter in canonical visit order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    /// Zeroed state shaped after `params`.
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.visit(|_, p| m.push(Matrix::zeros(p.value.rows(), p.value.cols())));
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step over every parameter, reading gradients from the
/// parameter gradient buffers. Decay is decoupled: after the Adam update,
/// `theta <- theta - lr * weight_decay * theta`, independent of the
/// gradient magnitudes.
pub fn adamw_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    lr: Real,
    weight_decay: Real,
) -> Result<(), TrainError> {
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let mut i = 0;
    let mut mismatch: Option<String> = None;
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.visit_mut(|name, p| {
        if mismatch.is_some() {
            return;
        }
        if i >= ms.len() || ms[i].shape() != p.value.shape() {
            mismatch = Some(name.to_string());
            return;
        }
        let g = p.grad.data();
        let m = ms[i].data_mut();
        let v = vs[i].data_mut();
        let theta = p.value.data_mut();
        for k in 0..g.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
            theta[k] -= lr * weight_decay * theta[k];
        }
        i += 1;
    });
    if let Some(name) = mismatch {
        return Err(TrainError::OptimizerShape { name });
    }
    if i != ms.len() {
        return Err(TrainError::OptimizerShape {
            name: format!("state has {} extra entries", ms.len() - i),
        });
    }
    Ok(())
}
