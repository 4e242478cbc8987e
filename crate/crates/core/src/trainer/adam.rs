//! Adam parameter updates with bias correction.

use std::collections::HashMap;

use crate::arch::Weights;
use crate::error::{HorizonError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment estimates per learnable parameter.
pub struct AdamState {
    pub t: u64,
    moments: HashMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            t: 0,
            moments: HashMap::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

/// One update over every learnable parameter. Buffers (running statistics)
/// are untouched; a learnable parameter without a gradient is an invariant
/// violation.
pub fn adam_step(
    weights: &mut Weights,
    grads: &HashMap<String, Vec<f32>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let corr1 = 1.0 - BETA1.powi(t);
    let corr2 = 1.0 - BETA2.powi(t);
    for path in weights.learnable_paths() {
        let grad = grads.get(&path).ok_or_else(|| {
            HorizonError::Invariant(format!("no gradient for learnable parameter '{path}'"))
        })?;
        let param = weights.get_mut(&path)?;
        if grad.len() != param.data.len() {
            return Err(HorizonError::Invariant(format!(
                "gradient length mismatch for '{path}'"
            )));
        }
        let (m, v) = state
            .moments
            .entry(path.clone())
            .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
        for ((w, &g), (m, v)) in param
            .data
            .iter_mut()
            .zip(grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m = (BETA1 * *m as f64 + (1.0 - BETA1) * g as f64) as f32;
            *v = (BETA2 * *v as f64 + (1.0 - BETA2) * (g as f64) * (g as f64)) as f32;
            let m_hat = *m as f64 / corr1;
            let v_hat = *v as f64 / corr2;
            *w -= (lr * m_hat / (v_hat.sqrt() + EPS)) as f32;
        }
    }
    Ok(())
}
