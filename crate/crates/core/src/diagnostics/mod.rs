//! Layer-wise representation diagnostics: Gram matrix entropy, effective
//! rank, linear probes and the consolidated per-layer report.

mod probe;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use probe::{linear_probe, ProbeConfig, ProbeResult};

use crate::corpus::ImageSample;
use crate::encoder::{forward_collect, trace_attention, LayerFeatureBundle, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::layer_scout::LayerWeights;
use crate::numerics::{matmul_tn, shannon_entropy, singular_values, symmetric_eigenvalues, Tensor};
use crate::par::Exec;

/// Below this total spectral mass a matrix counts as degenerate.
pub const DEGENERATE_MASS: f64 = 1e-12;

fn centered(f: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    if f.shape().len() != 2 {
        return Err(I2pError::Shape(format!("expected an n × d matrix, got {:?}", f.shape())));
    }
    let (n, d) = (f.rows(), f.cols());
    if n < 2 {
        return Err(I2pError::InvalidArgument(format!("need at least 2 rows, got {n}")));
    }
    f.ensure_finite("feature matrix")?;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(f.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        out.extend(f.row(i).iter().zip(&mean).map(|(x, m)| x - m));
    }
    Ok((n, d, out))
}

fn normalized_entropy(values: &[f64]) -> Option<f64> {
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total < DEGENERATE_MASS {
        return None;
    }
    let p: Vec<f64> = clipped.iter().map(|v| v / total).collect();
    let s: f64 = p.iter().sum();
    let p: Vec<f64> = p.iter().map(|v| v / s).collect();
    shannon_entropy(&p).ok()
}

/// Shannon entropy (nats) of the normalized eigenvalues of the centered
/// Gram matrix `F̃ F̃ᵀ`. When `n > d` the equal nonzero spectrum of
/// `F̃ᵀ F̃` is used instead.
pub fn gram_entropy(f: &Tensor) -> Result<f64> {
    let (n, d, c) = centered(f)?;
    let eig = if n <= d {
        let mut k = vec![0.0; n * n];
        crate::numerics::matmul_nt(&c, &c, &mut k, n, d, n, false);
        symmetrize(&mut k, n);
        symmetric_eigenvalues(n, &k)?
    } else {
        let mut k = vec![0.0; d * d];
        matmul_tn(&c, &c, &mut k, n, d, d, false);
        symmetrize(&mut k, d);
        symmetric_eigenvalues(d, &k)?
    };
    Ok(normalized_entropy(&eig).unwrap_or(0.0))
}

fn symmetrize(k: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (k[i * n + j] + k[j * n + i]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
}

/// `exp` of the Shannon entropy of the normalized singular values of the
/// centered matrix; 1 for a zero matrix.
pub fn effective_rank(f: &Tensor) -> Result<f64> {
    let (n, d, c) = centered(f)?;
    let sv = singular_values(n, d, &c)?;
    Ok(normalized_entropy(&sv).map_or(1.0, f64::exp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: usize,
    pub gram_entropy: f64,
    pub effective_rank: f64,
    pub probe_acc: f64,
    pub mean_pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    pub rows: Vec<LayerRow>,
    pub n: usize,
    pub d: usize,
}

impl LayerReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| I2pError::io(path, e))
    }

    pub fn read_rows(path: &Path) -> Result<Vec<LayerRow>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Layer (1-based) with the highest probe accuracy, ties to the lowest.
    pub fn probe_argmax(&self) -> usize {
        let acc: Vec<f64> = self.rows.iter().map(|r| r.probe_acc).collect();
        crate::numerics::argmax_lowest(&acc) + 1
    }
}

/// Spectra on the training features and probes trained on `train`,
/// evaluated on `test`, for every layer.
pub fn layer_report_from_bundles(
    train: &LayerFeatureBundle,
    train_labels: &[u8],
    test: &LayerFeatureBundle,
    test_labels: &[u8],
    weights: &LayerWeights,
    cfg: &ProbeConfig,
    exec: Exec,
) -> Result<LayerReport> {
    let l = train.layers();
    if weights.pi.len() != l || test.layers() != l {
        return Err(I2pError::Shape(format!(
            "{} layer weights, {} train layers, {} test layers",
            weights.pi.len(),
            l,
            test.layers()
        )));
    }
    let rows = exec.map_range(l, |i| -> Result<LayerRow> {
        let layer = i + 1;
        let ftr = train.layer_matrix(layer);
        let fte = test.layer_matrix(layer);
        let probe = linear_probe(&ftr, train_labels, &fte, test_labels, cfg)?;
        Ok(LayerRow {
            layer,
            gram_entropy: gram_entropy(&ftr)?,
            effective_rank: effective_rank(&ftr)?,
            probe_acc: probe.test_acc,
            mean_pi: weights.pi[i],
        })
    });
    Ok(LayerReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
        n: train.samples(),
        d: train.width(),
    })
}

/// Extracts features for both sets and builds the report.
pub fn build_layer_report(
    encoder: &ToyEncoder,
    train: &[ImageSample],
    test: &[ImageSample],
    weights: &LayerWeights,
    cfg: &ProbeConfig,
    exec: Exec,
) -> Result<LayerReport> {
    let collect = |set: &[ImageSample]| {
        let imgs: Vec<&[f64]> = set.iter().map(|s| s.pixels.as_slice()).collect();
        let ids: Vec<String> = set.iter().map(|s| s.id.clone()).collect();
        forward_collect(encoder, &imgs, &ids, exec)
    };
    let ytr: Vec<u8> = train.iter().map(|s| s.label).collect();
    let yte: Vec<u8> = test.iter().map(|s| s.label).collect();
    layer_report_from_bundles(&collect(train)?, &ytr, &collect(test)?, &yte, weights, cfg, exec)
}

/// Head-averaged CLS attention over patches, averaged over `images`, as
/// `(layer, patch_index, weight)` rows.
pub fn attention_profile(encoder: &ToyEncoder, images: &[&[f64]]) -> Result<Vec<(usize, usize, f64)>> {
    if images.is_empty() {
        return Err(I2pError::Empty("attention profile needs an image".into()));
    }
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for img in images {
        let t = trace_attention(encoder, img)?;
        if acc.is_empty() {
            acc = t.patch_weights.clone();
        } else {
            for (a, w) in acc.iter_mut().zip(&t.patch_weights) {
                for (x, y) in a.iter_mut().zip(w) {
                    *x += y;
                }
            }
        }
    }
    let k = images.len() as f64;
    Ok(acc
        .iter()
        .enumerate()
        .flat_map(|(l, row)| row.iter().enumerate().map(move |(p, w)| (l + 1, p, w / k)))
        .collect())
}

pub fn write_attention_csv(rows: &[(usize, usize, f64)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "patch_index", "weight"])?;
    for (l, p, x) in rows {
        w.write_record([l.to_string(), p.to_string(), x.to_string()])?;
    }
    w.flush().map_err(|e| I2pError::io(path, e))
}
