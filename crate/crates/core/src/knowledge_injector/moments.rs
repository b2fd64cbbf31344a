use std::collections::BTreeMap;

use crate::encoder::LinearId;
use crate::error::{I2pError, Result};
use crate::numerics::SpdMatrix;

/// Damping used when none is configured.
pub const DEFAULT_DAMPING: f64 = 1e-4;
/// Escalation factors tried when the damped matrix is not positive definite.
pub const DAMPING_LADDER: [f64; 3] = [1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
struct LayerMoments {
    dim: usize,
    /// Running `Σ xᵀx`; only the upper triangle is written.
    upper: Vec<f64>,
    rows: usize,
}

/// Per-layer activation second moments `Σ XᵀX` and row counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMoments {
    damping: f64,
    layers: BTreeMap<LinearId, LayerMoments>,
}

impl ActivationMoments {
    pub fn new(damping: f64) -> Result<Self> {
        if !(damping > 0.0 && damping.is_finite()) {
            return Err(I2pError::InvalidArgument(format!("damping {damping} must be positive")));
        }
        Ok(ActivationMoments {
            damping,
            layers: BTreeMap::new(),
        })
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = LinearId> + '_ {
        self.layers.keys().copied()
    }

    pub fn rows(&self, id: LinearId) -> usize {
        self.layers.get(&id).map_or(0, |m| m.rows)
    }

    /// Adds the rows of `x` (`rows × cols`, row-major) one at a time, so the
    /// result does not depend on how rows are grouped into blocks.
    pub fn accumulate(&mut self, id: LinearId, x: &[f64], cols: usize) -> Result<()> {
        if cols == 0 || !x.len().is_multiple_of(cols) {
            return Err(I2pError::Shape(format!(
                "{} activations do not form rows of {cols}",
                x.len()
            )));
        }
        let m = self.layers.entry(id).or_insert_with(|| LayerMoments {
            dim: cols,
            upper: vec![0.0; cols * cols],
            rows: 0,
        });
        if m.dim != cols {
            return Err(I2pError::Shape(format!(
                "{id} accumulates {}-dimensional rows, got {cols}",
                m.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(I2pError::NonFinite(format!("activations of {id}")));
        }
        let d = cols;
        for row in x.chunks_exact(d) {
            for i in 0..d {
                let xi = row[i];
                let acc = &mut m.upper[i * d + i..(i + 1) * d];
                for (a, xj) in acc.iter_mut().zip(&row[i..]) {
                    *a += xi * xj;
                }
            }
        }
        m.rows += x.len() / d;
        Ok(())
    }

    pub(crate) fn copy_layer(&mut self, other: &ActivationMoments, from: LinearId, to: LinearId) {
        if let Some(m) = other.layers.get(&from) {
            self.layers.insert(to, m.clone());
        }
    }

    /// Full symmetric `Σ XᵀX` of a layer.
    pub fn accumulator(&self, id: LinearId) -> Result<Vec<f64>> {
        let m = self.get(id)?;
        let d = m.dim;
        let mut full = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                full[i * d + j] = m.upper[i * d + j];
                full[j * d + i] = m.upper[i * d + j];
            }
        }
        Ok(full)
    }

    fn get(&self, id: LinearId) -> Result<&LayerMoments> {
        self.layers.get(&id).ok_or_else(|| I2pError::UnknownLayer(id.to_string()))
    }

    /// `H = Σ XᵀX / n + λ I`. If the Cholesky factorization fails, λ is
    /// raised ten-fold up to `100 λ`. Returns the matrix and the damping
    /// that was used.
    pub fn finalize_hessian(&self, id: LinearId) -> Result<(SpdMatrix, f64)> {
        let m = self.get(id)?;
        if m.rows == 0 {
            return Err(I2pError::Empty(format!("no activation rows for {id}")));
        }
        let mut last = self.damping;
        for factor in DAMPING_LADDER {
            last = self.damping * factor;
            let h = SpdMatrix::from_upper_scaled(m.dim, &m.upper, m.rows, last)?;
            match h.cholesky() {
                Ok(_) => return Ok((h, last)),
                Err(I2pError::NotPositiveDefinite { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(I2pError::DampingExhausted {
            layer: id.to_string(),
            damping: last,
        })
    }
}
