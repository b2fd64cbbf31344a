use std::collections::BTreeMap;

use serde::Serialize;

use crate::encoder::LinearId;
use crate::error::{I2pError, Result};
use crate::numerics::{spd_inverse_diag, SpdMatrix, Tensor};

/// `S_ij = w_ij² / [H⁻¹]_jj` for an `m × d` weight.
pub fn importance_scores(w: &Tensor, h: &SpdMatrix) -> Result<Tensor> {
    let (m, d) = (w.rows(), w.cols());
    if w.shape().len() != 2 || d != h.dim() {
        return Err(I2pError::Shape(format!(
            "weight {:?} does not match curvature of dim {}",
            w.shape(),
            h.dim()
        )));
    }
    let inv = spd_inverse_diag(h)?;
    let mut s = Vec::with_capacity(m * d);
    for i in 0..m {
        for (j, &x) in w.row(i).iter().enumerate() {
            s.push(x * x / inv[j]);
        }
    }
    Tensor::from_vec(&[m, d], s)
}

/// Per-layer importance scores, same shapes as the weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImportanceMap {
    pub scores: BTreeMap<LinearId, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub layer_id: String,
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub selected: usize,
}

impl ImportanceMap {
    pub fn total(&self) -> usize {
        self.scores.values().map(Tensor::numel).sum()
    }

    /// Every entry as `(score, layer, flat index)` sorted ascending by score,
    /// then layer order, then row-major position.
    pub fn ranked(&self) -> Vec<(f64, LinearId, usize)> {
        let mut all: Vec<(f64, LinearId, usize)> = self
            .scores
            .iter()
            .flat_map(|(&id, t)| t.data().iter().enumerate().map(move |(i, &s)| (s, id, i)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        all
    }

    /// Writes the lowest and highest `keep` ranked entries as
    /// `layer_id,row,col,score`.
    pub fn write_extremes_csv(&self, path: &std::path::Path, keep: usize) -> Result<()> {
        let ranked = self.ranked();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer_id", "row", "col", "score"])?;
        let n = ranked.len();
        let mut picks: Vec<usize> = (0..keep.min(n)).collect();
        picks.extend(n.saturating_sub(keep).max(keep.min(n))..n);
        for i in picks {
            let (s, id, flat) = ranked[i];
            let cols = self.scores[&id].cols();
            w.write_record([
                id.to_string(),
                (flat / cols).to_string(),
                (flat % cols).to_string(),
                format!("{s:e}"),
            ])?;
        }
        w.flush().map_err(|e| I2pError::io(path, e))
    }

    pub fn summaries(&self, mask: Option<&super::UpdateMask>) -> Vec<LayerSummary> {
        self.scores
            .iter()
            .map(|(id, t)| {
                let d = t.data();
                LayerSummary {
                    layer_id: id.to_string(),
                    count: d.len(),
                    min: d.iter().copied().fold(f64::INFINITY, f64::min),
                    mean: d.iter().sum::<f64>() / d.len() as f64,
                    max: d.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    selected: mask.and_then(|m| m.layer(*id)).map_or(0, |b| b.ones()),
                }
            })
            .collect()
    }
}
