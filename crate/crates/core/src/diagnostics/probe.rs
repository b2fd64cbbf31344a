use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};
use crate::numerics::{rng_for, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            lr: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub test_acc: f64,
    pub train_acc: f64,
    pub train_acc_initial: f64,
}

/// Affine `d → 2` softmax classifier trained by full-batch gradient descent
/// on standardized features; constant columns are dropped.
pub fn linear_probe(
    train: &Tensor,
    train_labels: &[u8],
    test: &Tensor,
    test_labels: &[u8],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let (n, d) = (train.rows(), train.cols());
    if train_labels.len() != n || test_labels.len() != test.rows() || test.cols() != d {
        return Err(I2pError::Shape("probe features and labels disagree".into()));
    }
    let pos = train_labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == n {
        return Err(I2pError::SingleClass("probe training labels".into()));
    }
    if test.rows() == 0 {
        return Err(I2pError::Empty("probe test set".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(train.row(i)) {
            *m += x / n as f64;
        }
    }
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            sd[j] += (train.at(i, j) - mean[j]).powi(2) / n as f64;
        }
    }
    let keep: Vec<usize> = (0..d).filter(|&j| sd[j].sqrt() > 1e-12).collect();
    let k = keep.len();
    let standardize = |t: &Tensor| -> Vec<f64> {
        let mut out = Vec::with_capacity(t.rows() * k);
        for i in 0..t.rows() {
            for &j in &keep {
                out.push((t.at(i, j) - mean[j]) / sd[j].sqrt());
            }
        }
        out
    };
    let xtr = standardize(train);
    let xte = standardize(test);

    let mut rng = rng_for(cfg.seed, 0x9_20BE, 0);
    let mut w: Vec<f64> = (0..k * 2).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut b = [0.0; 2];
    let preds = |x: &[f64], rows: usize, w: &[f64], b: &[f64; 2]| -> Vec<u8> {
        (0..rows)
            .map(|i| {
                let (mut z0, mut z1) = (b[0], b[1]);
                for (j, v) in x[i * k..(i + 1) * k].iter().enumerate() {
                    z0 += v * w[j * 2];
                    z1 += v * w[j * 2 + 1];
                }
                u8::from(z1 > z0)
            })
            .collect()
    };
    let acc = |pred: &[u8], y: &[u8]| pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
    let train_acc_initial = acc(&preds(&xtr, n, &w, &b), train_labels);

    let inv_n = 1.0 / n as f64;
    let mut gw = vec![0.0; k * 2];
    for _ in 0..cfg.steps {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = [0.0; 2];
        for i in 0..n {
            let row = &xtr[i * k..(i + 1) * k];
            let (mut z0, mut z1) = (b[0], b[1]);
            for (j, v) in row.iter().enumerate() {
                z0 += v * w[j * 2];
                z1 += v * w[j * 2 + 1];
            }
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let p1 = e1 / (e0 + e1);
            let y1 = f64::from(train_labels[i]);
            let d1 = (p1 - y1) * inv_n;
            let d0 = -d1;
            gb[0] += d0;
            gb[1] += d1;
            for (j, v) in row.iter().enumerate() {
                gw[j * 2] += d0 * v;
                gw[j * 2 + 1] += d1 * v;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= cfg.lr * g;
        }
        b[0] -= cfg.lr * gb[0];
        b[1] -= cfg.lr * gb[1];
    }
    Ok(ProbeResult {
        test_acc: acc(&preds(&xte, test.rows(), &w, &b), test_labels),
        train_acc: acc(&preds(&xtr, n, &w, &b), train_labels),
        train_acc_initial,
    })
}
