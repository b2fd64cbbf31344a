use serde::{Deserialize, Serialize};

use super::{bce_with_logits, ClassifierHead};
use crate::encoder::{Checkpoint, EncoderGrads, GradSelection, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::numerics::{sigmoid, Tensor};
use crate::par::Exec;

/// Fixed per-dimension affine map `(f − mean) · scale` applied before the
/// head. Dimensions with no spread get scale 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(d: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Standardizes with the column statistics of `rows` (`n × d`).
    pub fn fit(rows: &[f64], d: usize) -> Result<Self> {
        if d == 0 || rows.is_empty() || !rows.len().is_multiple_of(d) {
            return Err(I2pError::Shape("feature norm needs a non-empty n × d matrix".into()));
        }
        let n = (rows.len() / d) as f64;
        let mut mean = vec![0.0; d];
        for r in rows.chunks_exact(d) {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows.chunks_exact(d) {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Ok(FeatureNorm { mean, scale })
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    }
}

/// Encoder prefix read at its last block, a fixed feature normalizer and a
/// single-logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub encoder: ToyEncoder,
    pub norm: FeatureNorm,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl Detector {
    pub fn new(encoder: ToyEncoder, norm: FeatureNorm) -> Result<Self> {
        let d = encoder.width();
        if norm.mean.len() != d || norm.scale.len() != d {
            return Err(I2pError::Shape(format!("feature norm is not {d}-dimensional")));
        }
        Ok(Detector {
            encoder,
            norm,
            head: ClassifierHead::zeros(d),
        })
    }

    pub fn readout(&self) -> usize {
        self.encoder.depth()
    }

    /// `n × d` readout features.
    pub fn features(&self, images: &[&[f64]], exec: Exec) -> Result<Vec<f64>> {
        let all = self.encoder.forward_features(images, exec)?;
        let (l, d) = (self.encoder.depth(), self.encoder.width());
        let mut out = Vec::with_capacity(images.len() * d);
        for row in all.data().chunks_exact(l * d) {
            out.extend_from_slice(&row[(l - 1) * d..]);
        }
        Ok(out)
    }

    pub fn logits_from_features(&self, feats: &[f64]) -> Result<Vec<f64>> {
        let d = self.encoder.width();
        feats
            .chunks_exact(d)
            .map(|f| self.head.logit(&self.norm.apply(f)))
            .collect()
    }

    /// Fake-class probabilities.
    pub fn scores(&self, images: &[&[f64]], exec: Exec) -> Result<Vec<f64>> {
        let f = self.features(images, exec)?;
        Ok(self.logits_from_features(&f)?.into_iter().map(sigmoid).collect())
    }

    /// Mean BCE over the batch and gradients of the head and of the encoder
    /// parameters in `sel`.
    pub fn loss_and_grads(
        &self,
        images: &[&[f64]],
        labels: &[u8],
        sel: &GradSelection,
    ) -> Result<(f64, EncoderGrads, HeadGrads)> {
        if images.len() != labels.len() || images.is_empty() {
            return Err(I2pError::Shape(format!(
                "{} images for {} labels",
                images.len(),
                labels.len()
            )));
        }
        let keep = !sel.is_empty();
        let trace = self.encoder.forward_trace(images, keep)?;
        let feats = trace.cls(self.readout());
        let (loss, head, d_feat) = self.head_backward(feats, labels)?;
        let grads = if keep {
            let mut d_cls = vec![None; self.readout()];
            d_cls[self.readout() - 1] = Some(d_feat);
            self.encoder.backward(&trace, &d_cls, sel)?
        } else {
            EncoderGrads::new()
        };
        Ok((loss, grads, head))
    }

    /// Loss and gradients given precomputed readout features (`n × d`);
    /// also returns the gradient with respect to those features.
    pub fn head_backward(&self, feats: &[f64], labels: &[u8]) -> Result<(f64, HeadGrads, Vec<f64>)> {
        head_backward(&self.head, &self.norm, feats, labels)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let d = self.encoder.width();
        let extras = vec![
            ("head.weight".to_string(), Tensor::from_vec(&[d], self.head.weight.clone())?),
            ("head.bias".to_string(), Tensor::from_vec(&[1], vec![self.head.bias])?),
            ("norm.mean".to_string(), Tensor::from_vec(&[d], self.norm.mean.clone())?),
            ("norm.scale".to_string(), Tensor::from_vec(&[d], self.norm.scale.clone())?),
        ];
        Checkpoint::from_encoder(&self.encoder, extras)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let encoder = ck.to_encoder()?;
        let get = |name: &str| {
            ck.tensor(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| I2pError::Format {
                    kind: "checkpoint",
                    detail: format!("missing tensor {name}"),
                })
        };
        let mut det = Detector::new(
            encoder,
            FeatureNorm {
                mean: get("norm.mean")?,
                scale: get("norm.scale")?,
            },
        )?;
        det.head.weight = get("head.weight")?;
        det.head.bias = get("head.bias")?[0];
        if det.head.weight.len() != det.encoder.width() {
            return Err(I2pError::Shape("head width differs from encoder width".into()));
        }
        Ok(det)
    }
}

/// Mean BCE of `head` on normalized `feats` (`n × d`), its gradients and the
/// gradient with respect to the raw features.
pub fn head_backward(
    head: &ClassifierHead,
    norm: &FeatureNorm,
    feats: &[f64],
    labels: &[u8],
) -> Result<(f64, HeadGrads, Vec<f64>)> {
    let d = head.weight.len();
    let n = labels.len();
    if feats.len() != n * d || n == 0 {
        return Err(I2pError::Shape(format!("{} features for {n} labels", feats.len())));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut hg = HeadGrads {
        weight: vec![0.0; d],
        bias: 0.0,
    };
    let mut d_feat = vec![0.0; n * d];
    for (i, f) in feats.chunks_exact(d).enumerate() {
        let x = norm.apply(f);
        let z = head.logit(&x)?;
        let (l, g) = bce_with_logits(z, labels[i] as f64);
        loss += l * inv_n;
        let dz = g * inv_n;
        for j in 0..d {
            hg.weight[j] += dz * x[j];
            d_feat[i * d + j] = dz * head.weight[j] * norm.scale[j];
        }
        hg.bias += dz;
    }
    if !loss.is_finite() {
        return Err(I2pError::NonFinite("training loss".into()));
    }
    Ok((loss, hg, d_feat))
}
