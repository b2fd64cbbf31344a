//! Controlled knowledge injection: activation moments, damped curvature,
//! second-order importance, lowest-importance masks and masked stepping.

mod importance;
mod mask;
mod moments;
mod step;

use std::collections::BTreeMap;

pub use importance::{importance_scores, ImportanceMap, LayerSummary};
pub use mask::{budget, build_mask, LayerMask, MaskScope, UpdateMask, MASK_MAGIC, MASK_VERSION};
pub use moments::{ActivationMoments, DAMPING_LADDER, DEFAULT_DAMPING};
pub use step::{masked_step, masked_step_indices, StepHyper, StepRule};

use crate::encoder::{LinearId, LinearKind, ToyEncoder, CHUNK};
use crate::error::{I2pError, Result};
use crate::par::Exec;

/// One pass over `images` in batches of `batch`, accumulating the input
/// moments of every layer in `layers`. Rows enter the accumulators in sample
/// order regardless of `batch`.
pub fn calibrate(
    encoder: &ToyEncoder,
    images: &[&[f64]],
    layers: &[LinearId],
    damping: f64,
    batch: usize,
) -> Result<ActivationMoments> {
    if batch == 0 {
        return Err(I2pError::InvalidArgument("calibration batch must be >= 1".into()));
    }
    if images.is_empty() {
        return Err(I2pError::Empty("calibration set".into()));
    }
    for id in layers {
        if id.layer == 0 || id.layer > encoder.depth() {
            return Err(I2pError::UnknownLayer(id.to_string()));
        }
    }
    let mut moments = ActivationMoments::new(damping)?;
    // Q, K and V read the same rows; accumulate once and copy.
    let is_shared = |id: &LinearId| matches!(id.kind, LinearKind::K | LinearKind::V);
    let mut direct: Vec<LinearId> = layers.iter().copied().filter(|id| !is_shared(id)).collect();
    for id in layers.iter().filter(|id| is_shared(id)) {
        let q = LinearId::new(id.layer, LinearKind::Q);
        if !direct.contains(&q) {
            direct.push(q);
        }
    }
    direct.sort();
    if direct.is_empty() {
        return Ok(moments);
    }
    let top = direct.iter().map(|id| id.layer).max().unwrap_or(1);
    let prefix = crate::encoder::prune_after(encoder, top)?;
    for chunk in images.chunks(batch) {
        let trace = prefix.forward_trace(chunk, true)?;
        for &id in &direct {
            let (x, _) = trace.linear_io(id)?;
            moments.accumulate(id, x, prefix.linear(id)?.in_dim())?;
        }
    }
    let mut out = ActivationMoments::new(damping)?;
    for &id in layers {
        let src = if is_shared(&id) { LinearId::new(id.layer, LinearKind::Q) } else { id };
        out.copy_layer(&moments, src, id);
    }
    Ok(out)
}

/// Calibration with the default batch size.
pub fn calibrate_default(
    encoder: &ToyEncoder,
    images: &[&[f64]],
    layers: &[LinearId],
    damping: f64,
) -> Result<ActivationMoments> {
    calibrate(encoder, images, layers, damping, CHUNK)
}

/// Importance of every layer in `moments`, computed in parallel across
/// layers. Also returns the damping each layer ended up using.
pub fn compute_importance(
    encoder: &ToyEncoder,
    moments: &ActivationMoments,
    exec: Exec,
) -> Result<(ImportanceMap, BTreeMap<LinearId, f64>)> {
    let ids: Vec<LinearId> = moments.layer_ids().collect();
    let results = exec.map(&ids, |&id| -> Result<_> {
        let (h, used) = moments.finalize_hessian(id)?;
        let s = importance_scores(&encoder.linear(id)?.weight, &h)?;
        Ok((id, s, used))
    });
    let mut map = ImportanceMap::default();
    let mut damping = BTreeMap::new();
    for r in results {
        let (id, s, used) = r?;
        map.scores.insert(id, s);
        damping.insert(id, used);
    }
    Ok((map, damping))
}
