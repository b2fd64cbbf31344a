use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};
use crate::trainer::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Adam(AdamConfig),
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepHyper {
    pub lr: f64,
    pub rule: StepRule,
}

/// One optimizer step restricted to entries with `mask[i] == true`. Frozen
/// entries keep their value and their Adam moments are never touched.
pub fn masked_step(
    params: &mut [f64],
    grads: &[f64],
    mask: &[bool],
    state: &mut AdamState,
    hyper: &StepHyper,
) -> Result<()> {
    if mask.len() != params.len() {
        return Err(I2pError::Shape(format!(
            "mask has {} entries for {} parameters",
            mask.len(),
            params.len()
        )));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    masked_step_indices(params, grads, &idx, state, hyper)
}

/// [`masked_step`] with the trainable entries given as flat indices.
pub fn masked_step_indices(
    params: &mut [f64],
    grads: &[f64],
    indices: &[usize],
    state: &mut AdamState,
    hyper: &StepHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(I2pError::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= params.len()) {
        return Err(I2pError::Shape(format!("mask index {i} out of range")));
    }
    match hyper.rule {
        StepRule::Sgd => {
            for &i in indices {
                params[i] -= hyper.lr * grads[i];
            }
        }
        StepRule::Adam(cfg) => {
            state.step += 1;
            let (c1, c2) = state.corrections(&cfg);
            for &i in indices {
                state.apply(i, params, grads[i], &cfg, hyper.lr, c1, c2);
            }
        }
    }
    Ok(())
}
