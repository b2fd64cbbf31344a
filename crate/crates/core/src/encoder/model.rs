use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use crate::error::{I2pError, Result};
use crate::numerics::{rng_for, truncated_normal, Tensor};

const INIT_STREAM: u64 = 0x1917;
pub const INIT_STD: f64 = 0.02;

/// Affine map `y = x Wᵀ + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

impl Block {
    pub fn linear(&self, kind: LinearKind) -> &Linear {
        match kind {
            LinearKind::Q => &self.q,
            LinearKind::K => &self.k,
            LinearKind::V => &self.v,
            LinearKind::O => &self.o,
            LinearKind::MlpIn => &self.mlp_in,
            LinearKind::MlpOut => &self.mlp_out,
        }
    }

    pub fn linear_mut(&mut self, kind: LinearKind) -> &mut Linear {
        match kind {
            LinearKind::Q => &mut self.q,
            LinearKind::K => &mut self.k,
            LinearKind::V => &mut self.v,
            LinearKind::O => &mut self.o,
            LinearKind::MlpIn => &mut self.mlp_in,
            LinearKind::MlpOut => &mut self.mlp_out,
        }
    }
}

/// The six linear maps inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinearKind {
    Q,
    K,
    V,
    O,
    MlpIn,
    MlpOut,
}

impl LinearKind {
    pub const ALL: [LinearKind; 6] = [
        LinearKind::Q,
        LinearKind::K,
        LinearKind::V,
        LinearKind::O,
        LinearKind::MlpIn,
        LinearKind::MlpOut,
    ];

    fn name(self) -> &'static str {
        match self {
            LinearKind::Q => "attn_q",
            LinearKind::K => "attn_k",
            LinearKind::V => "attn_v",
            LinearKind::O => "attn_o",
            LinearKind::MlpIn => "mlp_in",
            LinearKind::MlpOut => "mlp_out",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        LinearKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A linear layer eligible for curvature estimation and masking. `layer` is
/// 1-based, matching the critical-layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinearId {
    pub layer: usize,
    pub kind: LinearKind,
}

impl LinearId {
    pub fn new(layer: usize, kind: LinearKind) -> Self {
        LinearId { layer, kind }
    }

    /// Every eligible linear layer of blocks `1..=depth`, in canonical order.
    pub fn all(depth: usize) -> Vec<LinearId> {
        (1..=depth)
            .flat_map(|layer| LinearKind::ALL.into_iter().map(move |kind| LinearId { layer, kind }))
            .collect()
    }
}

impl fmt::Display for LinearId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block{}.{}", self.layer, self.kind.name())
    }
}

impl FromStr for LinearId {
    type Err = I2pError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || I2pError::UnknownLayer(s.to_string());
        let rest = s.strip_prefix("block").ok_or_else(bad)?;
        let (num, kind) = rest.split_once('.').ok_or_else(bad)?;
        let layer: usize = num.parse().map_err(|_| bad())?;
        let kind = LinearKind::from_name(kind).ok_or_else(bad)?;
        if layer == 0 {
            return Err(bad());
        }
        Ok(LinearId { layer, kind })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockParam {
    Ln1Gain,
    Ln1Bias,
    Weight(LinearKind),
    Bias(LinearKind),
    Ln2Gain,
    Ln2Bias,
}

/// Identifies one parameter tensor of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    EmbedWeight,
    EmbedBias,
    Cls,
    Pos,
    Block { layer: usize, param: BlockParam },
}

impl ParamId {
    pub fn weight(id: LinearId) -> Self {
        ParamId::Block {
            layer: id.layer,
            param: BlockParam::Weight(id.kind),
        }
    }

    /// Block index (1-based) the parameter lives in; 0 for embeddings.
    pub fn layer(&self) -> usize {
        match self {
            ParamId::Block { layer, .. } => *layer,
            _ => 0,
        }
    }

    pub fn as_linear_weight(&self) -> Option<LinearId> {
        match *self {
            ParamId::Block {
                layer,
                param: BlockParam::Weight(kind),
            } => Some(LinearId { layer, kind }),
            _ => None,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::EmbedWeight => write!(f, "embed.weight"),
            ParamId::EmbedBias => write!(f, "embed.bias"),
            ParamId::Cls => write!(f, "cls"),
            ParamId::Pos => write!(f, "pos"),
            ParamId::Block { layer, param } => match param {
                BlockParam::Ln1Gain => write!(f, "block{layer}.ln1.gain"),
                BlockParam::Ln1Bias => write!(f, "block{layer}.ln1.bias"),
                BlockParam::Ln2Gain => write!(f, "block{layer}.ln2.gain"),
                BlockParam::Ln2Bias => write!(f, "block{layer}.ln2.bias"),
                BlockParam::Weight(k) => write!(f, "block{layer}.{}.weight", k.name()),
                BlockParam::Bias(k) => write!(f, "block{layer}.{}.bias", k.name()),
            },
        }
    }
}

impl FromStr for ParamId {
    type Err = I2pError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || I2pError::Format {
            kind: "parameter name",
            detail: s.to_string(),
        };
        match s {
            "embed.weight" => return Ok(ParamId::EmbedWeight),
            "embed.bias" => return Ok(ParamId::EmbedBias),
            "cls" => return Ok(ParamId::Cls),
            "pos" => return Ok(ParamId::Pos),
            _ => {}
        }
        let rest = s.strip_prefix("block").ok_or_else(bad)?;
        let mut parts = rest.splitn(3, '.');
        let layer: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let a = parts.next().ok_or_else(bad)?;
        let b = parts.next().ok_or_else(bad)?;
        let param = match (a, b) {
            ("ln1", "gain") => BlockParam::Ln1Gain,
            ("ln1", "bias") => BlockParam::Ln1Bias,
            ("ln2", "gain") => BlockParam::Ln2Gain,
            ("ln2", "bias") => BlockParam::Ln2Bias,
            (k, "weight") => BlockParam::Weight(LinearKind::from_name(k).ok_or_else(bad)?),
            (k, "bias") => BlockParam::Bias(LinearKind::from_name(k).ok_or_else(bad)?),
            _ => return Err(bad()),
        };
        Ok(ParamId::Block { layer, param })
    }
}

/// Toy vision transformer: patch embedding, CLS token, learned positions
/// and a stack of pre-norm blocks. No final norm or projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    config: EncoderConfig,
    pub embed: Linear,
    pub cls: Vec<f64>,
    pub pos: Tensor,
    pub blocks: Vec<Block>,
}

impl ToyEncoder {
    /// All-zero weights with unit LayerNorm gains.
    pub fn zeroed(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let h = config.mlp_hidden;
        let block = Block {
            ln1: LayerNorm::new(d),
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
            ln2: LayerNorm::new(d),
            mlp_in: Linear::zeros(h, d),
            mlp_out: Linear::zeros(d, h),
        };
        Ok(ToyEncoder {
            config,
            embed: Linear::zeros(d, config.patch_dim()),
            cls: vec![0.0; d],
            pos: Tensor::zeros(&[config.tokens(), d]),
            blocks: vec![block; config.depth],
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Parameter tensors in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            ParamId::EmbedWeight,
            ParamId::EmbedBias,
            ParamId::Cls,
            ParamId::Pos,
        ];
        for layer in 1..=self.depth() {
            let mut push = |param| ids.push(ParamId::Block { layer, param });
            push(BlockParam::Ln1Gain);
            push(BlockParam::Ln1Bias);
            for k in [LinearKind::Q, LinearKind::K, LinearKind::V, LinearKind::O] {
                push(BlockParam::Weight(k));
                push(BlockParam::Bias(k));
            }
            push(BlockParam::Ln2Gain);
            push(BlockParam::Ln2Bias);
            for k in [LinearKind::MlpIn, LinearKind::MlpOut] {
                push(BlockParam::Weight(k));
                push(BlockParam::Bias(k));
            }
        }
        ids
    }

    pub fn param_shape(&self, id: ParamId) -> Result<Vec<usize>> {
        Ok(match id {
            ParamId::EmbedWeight => self.embed.weight.shape().to_vec(),
            ParamId::Pos => self.pos.shape().to_vec(),
            ParamId::Block {
                layer,
                param: BlockParam::Weight(k),
            } => self.block(layer)?.linear(k).weight.shape().to_vec(),
            other => vec![self.param(other)?.len()],
        })
    }

    fn block(&self, layer: usize) -> Result<&Block> {
        layer
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i))
            .ok_or_else(|| I2pError::UnknownLayer(format!("block{layer}")))
    }

    pub fn param(&self, id: ParamId) -> Result<&[f64]> {
        Ok(match id {
            ParamId::EmbedWeight => self.embed.weight.data(),
            ParamId::EmbedBias => &self.embed.bias,
            ParamId::Cls => &self.cls,
            ParamId::Pos => self.pos.data(),
            ParamId::Block { layer, param } => {
                let b = self.block(layer)?;
                match param {
                    BlockParam::Ln1Gain => &b.ln1.gain,
                    BlockParam::Ln1Bias => &b.ln1.bias,
                    BlockParam::Ln2Gain => &b.ln2.gain,
                    BlockParam::Ln2Bias => &b.ln2.bias,
                    BlockParam::Weight(k) => b.linear(k).weight.data(),
                    BlockParam::Bias(k) => &b.linear(k).bias,
                }
            }
        })
    }

    pub fn param_mut(&mut self, id: ParamId) -> Result<&mut [f64]> {
        let depth = self.depth();
        Ok(match id {
            ParamId::EmbedWeight => self.embed.weight.data_mut(),
            ParamId::EmbedBias => &mut self.embed.bias,
            ParamId::Cls => &mut self.cls,
            ParamId::Pos => self.pos.data_mut(),
            ParamId::Block { layer, param } => {
                if layer == 0 || layer > depth {
                    return Err(I2pError::UnknownLayer(format!("block{layer}")));
                }
                let b = &mut self.blocks[layer - 1];
                match param {
                    BlockParam::Ln1Gain => &mut b.ln1.gain,
                    BlockParam::Ln1Bias => &mut b.ln1.bias,
                    BlockParam::Ln2Gain => &mut b.ln2.gain,
                    BlockParam::Ln2Bias => &mut b.ln2.bias,
                    BlockParam::Weight(k) => b.linear_mut(k).weight.data_mut(),
                    BlockParam::Bias(k) => &mut b.linear_mut(k).bias,
                }
            }
        })
    }

    pub fn linear(&self, id: LinearId) -> Result<&Linear> {
        Ok(self.block(id.layer)?.linear(id.kind))
    }

    pub fn param_count(&self) -> usize {
        self.param_ids()
            .into_iter()
            .map(|id| self.param(id).map_or(0, <[f64]>::len))
            .sum()
    }

    /// Number of weights in the eligible linear layers of blocks `1..=depth`.
    pub fn eligible_count(&self) -> usize {
        LinearId::all(self.depth())
            .into_iter()
            .map(|id| self.blocks[id.layer - 1].linear(id.kind).weight.numel())
            .sum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for id in self.param_ids() {
            if self.param(id)?.iter().any(|x| !x.is_finite()) {
                return Err(I2pError::NonFinite(id.to_string()));
            }
        }
        Ok(())
    }

    pub(crate) fn with_config(mut self, config: EncoderConfig) -> Self {
        self.config = config;
        self
    }
}

/// Truncated-normal weights (std 0.02, cut at ±2 std), zero biases and unit
/// LayerNorm gains. Fully determined by `config.seed`.
pub fn init_encoder(config: EncoderConfig) -> Result<ToyEncoder> {
    let mut enc = ToyEncoder::zeroed(config)?;
    let mut rng = rng_for(config.seed, INIT_STREAM, 0);
    let mut fill = |xs: &mut [f64]| {
        for x in xs {
            *x = truncated_normal(&mut rng, INIT_STD);
        }
    };
    fill(enc.embed.weight.data_mut());
    fill(&mut enc.cls);
    fill(enc.pos.data_mut());
    for block in &mut enc.blocks {
        for k in LinearKind::ALL {
            fill(block.linear_mut(k).weight.data_mut());
        }
    }
    Ok(enc)
}

/// Keeps blocks `1..=critical` and drops the rest.
pub fn prune_after(encoder: &ToyEncoder, critical: usize) -> Result<ToyEncoder> {
    if critical == 0 || critical > encoder.depth() {
        return Err(I2pError::InvalidArgument(format!(
            "critical layer {critical} outside 1..={}",
            encoder.depth()
        )));
    }
    let mut pruned = encoder.clone();
    pruned.blocks.truncate(critical);
    let config = EncoderConfig {
        depth: critical,
        ..*encoder.config()
    };
    Ok(pruned.with_config(config))
}
