//! Toy vision transformer with per-layer CLS readout, activation capture for
//! curvature estimation, attention tracing and structured pruning.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod model;

use std::collections::BTreeMap;

pub use backward::{EncoderGrads, GradEntries, GradSelection};
pub use checkpoint::{is_encoder_tensor, parameter_checksum, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::EncoderConfig;
pub use forward::{forward_collect, trace_attention, AttentionTrace, ForwardTrace, LayerFeatureBundle, CHUNK};
pub use model::{init_encoder, prune_after, Block, BlockParam, LayerNorm, Linear, LinearId, LinearKind, ParamId, ToyEncoder, INIT_STD};

use crate::error::{I2pError, Result};
use crate::numerics::Tensor;

/// Input rows fed to one linear layer during a forward pass, and the rows it
/// produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedLinear {
    pub input: Tensor,
    pub output: Tensor,
}

impl ForwardTrace {
    /// `(input, output)` activations of a linear layer recorded in this trace.
    pub(crate) fn linear_io(&self, id: LinearId) -> Result<(&[f64], &[f64])> {
        let cache = id
            .layer
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i))
            .ok_or_else(|| I2pError::UnknownLayer(id.to_string()))?;
        Ok(match id.kind {
            LinearKind::Q => (&cache.a, &cache.q),
            LinearKind::K => (&cache.a, &cache.k),
            LinearKind::V => (&cache.a, &cache.v),
            LinearKind::O => (&cache.ctx, &cache.attn_out),
            LinearKind::MlpIn => (&cache.b, &cache.u),
            LinearKind::MlpOut => (&cache.g, &cache.mlp_out),
        })
    }
}

/// Runs one forward pass over `images` and returns, for each requested
/// layer, the exact matrix multiplied by its weight (rows are token positions
/// of every sample, sample-major) together with the layer's output.
pub fn capture_linear_inputs(
    encoder: &ToyEncoder,
    images: &[&[f64]],
    layer_set: &[LinearId],
) -> Result<BTreeMap<LinearId, CapturedLinear>> {
    for id in layer_set {
        if id.layer == 0 || id.layer > encoder.depth() {
            return Err(I2pError::UnknownLayer(id.to_string()));
        }
    }
    let mut out = BTreeMap::new();
    if layer_set.is_empty() {
        return Ok(out);
    }
    let trace = encoder.forward_trace(images, true)?;
    for &id in layer_set {
        let lin = encoder.linear(id)?;
        let (x, y) = trace.linear_io(id)?;
        let rows = x.len() / lin.in_dim();
        out.insert(
            id,
            CapturedLinear {
                input: Tensor::from_vec(&[rows, lin.in_dim()], x.to_vec())?,
                output: Tensor::from_vec(&[rows, lin.out_dim()], y.to_vec())?,
            },
        );
    }
    Ok(out)
}
