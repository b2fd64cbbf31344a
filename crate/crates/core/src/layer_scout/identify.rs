use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{weights_from_scores, Aggregation, BiasPlacement, LayerWeights, ScoringNet};
use crate::corpus::ImageSample;
use crate::encoder::{forward_collect, parameter_checksum, LayerFeatureBundle, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::numerics::{rng_for, softmax, Tensor};
use crate::par::Exec;
use crate::trainer::{bce_with_logits, AdamConfig, AdamState, ClassifierHead, FeatureNorm};

const STREAM_ORDER: u64 = 0x1D_0D3E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub placement: BiasPlacement,
    pub aggregation: Aggregation,
    /// Standardize each layer's features with training statistics.
    pub standardize: bool,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            hidden: 32,
            lr: 3e-3,
            epochs: 1,
            batch_size: 16,
            seed: 0,
            placement: BiasPlacement::Inside,
            aggregation: Aggregation::Mean,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalLayerReport {
    pub pi: Vec<f64>,
    pub critical_index: usize,
    pub mean_alpha: Vec<f64>,
    pub loss_curve: Vec<f64>,
}

/// Everything learned during identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyState {
    pub net: ScoringNet,
    pub head: ClassifierHead,
    /// One normalizer per layer.
    pub norms: Vec<FeatureNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

/// Applies per-layer normalizers to a bundle.
pub fn normalize_bundle(bundle: &LayerFeatureBundle, norms: &[FeatureNorm]) -> Result<LayerFeatureBundle> {
    let (n, l, d) = (bundle.samples(), bundle.layers(), bundle.width());
    if norms.len() != l {
        return Err(I2pError::Shape(format!("{} normalizers for {l} layers", norms.len())));
    }
    let mut out = Vec::with_capacity(n * l * d);
    for i in 0..n {
        for (layer, norm) in (1..=l).zip(norms) {
            out.extend(norm.apply(bundle.get(i, layer)));
        }
    }
    Ok(LayerFeatureBundle {
        features: Tensor::from_vec(&[n, l, d], out)?,
        sample_ids: bundle.sample_ids.clone(),
    })
}

impl IdentifyState {
    /// Mean BCE of `head(Σ π_ℓ f_ℓ)` over samples `idx` of a normalized
    /// bundle, with gradients for the scorer and the head.
    pub fn loss_and_grads(&self, bundle: &LayerFeatureBundle, idx: &[usize], labels: &[u8]) -> Result<(f64, ScoringGrads)> {
        let net = &self.net;
        let (l, d, h) = (bundle.layers(), bundle.width(), net.hidden());
        if idx.is_empty() || idx.len() != labels.len() {
            return Err(I2pError::Shape(format!("{} samples for {} labels", idx.len(), labels.len())));
        }
        let mut g = ScoringGrads {
            w1: vec![0.0; h * d],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
            head_w: vec![0.0; d],
            head_b: 0.0,
        };
        let inv_n = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        for (&i, &y) in idx.iter().zip(labels) {
            let hidden: Vec<Vec<f64>> = (1..=l).map(|layer| net.hidden_act(bundle.get(i, layer))).collect();
            let alpha: Vec<f64> = hidden.iter().map(|t| net.score_from_hidden(t)).collect();
            let pi = softmax(&alpha)?;
            let mut fhat = vec![0.0; d];
            for (layer, p) in (1..=l).zip(&pi) {
                for (o, x) in fhat.iter_mut().zip(bundle.get(i, layer)) {
                    *o += p * x;
                }
            }
            let z = self.head.logit(&fhat)?;
            let (li, dz) = bce_with_logits(z, y as f64);
            loss += li * inv_n;
            let dz = dz * inv_n;
            for j in 0..d {
                g.head_w[j] += dz * fhat[j];
            }
            g.head_b += dz;
            // dL/dπ_ℓ = dz · w · f_ℓ, then through the softmax.
            let dpi: Vec<f64> = (1..=l)
                .map(|layer| dz * self.head.weight.iter().zip(bundle.get(i, layer)).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            let mix: f64 = pi.iter().zip(&dpi).map(|(p, q)| p * q).sum();
            for (li, layer) in (1..=l).enumerate() {
                let da = pi[li] * (dpi[li] - mix);
                let t = &hidden[li];
                let f = bundle.get(i, layer);
                g.b2 += da;
                for k in 0..h {
                    let (tk, db1_direct) = match net.placement {
                        BiasPlacement::Inside => (t[k], 0.0),
                        BiasPlacement::Printed => (t[k] + net.b1[k], da * net.w2[k]),
                    };
                    g.w2[k] += da * tk;
                    let du = da * net.w2[k] * (1.0 - t[k] * t[k]);
                    match net.placement {
                        BiasPlacement::Inside => g.b1[k] += du,
                        BiasPlacement::Printed => g.b1[k] += db1_direct,
                    }
                    if du != 0.0 {
                        for (gw, x) in g.w1[k * d..(k + 1) * d].iter_mut().zip(f) {
                            *gw += du * x;
                        }
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(I2pError::NonFinite("identification loss".into()));
        }
        Ok((loss, g))
    }
}

/// Result of one identification run.
#[derive(Debug, Clone)]
pub struct Identification {
    pub report: CriticalLayerReport,
    pub weights: LayerWeights,
    pub state: IdentifyState,
}

fn check_classes(labels: &[u8]) -> Result<()> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(I2pError::SingleClass(format!("{pos} of {} samples are fake", labels.len())));
    }
    Ok(())
}

/// Trains the scorer and a head on precomputed features and selects the
/// critical layer.
pub fn identify_from_bundle(bundle: &LayerFeatureBundle, labels: &[u8], cfg: &IdentifyConfig) -> Result<Identification> {
    let (n, l, d) = (bundle.samples(), bundle.layers(), bundle.width());
    if labels.len() != n {
        return Err(I2pError::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    check_classes(labels)?;
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(I2pError::InvalidArgument(format!("invalid identification config {cfg:?}")));
    }
    let norms: Vec<FeatureNorm> = if cfg.standardize {
        (1..=l)
            .map(|layer| FeatureNorm::fit(bundle.layer_matrix(layer).data(), d))
            .collect::<Result<_>>()?
    } else {
        vec![FeatureNorm::identity(d); l]
    };
    let normed = normalize_bundle(bundle, &norms)?;
    let mut net = ScoringNet::init(d, cfg.hidden, cfg.seed)?;
    net.placement = cfg.placement;
    let mut state = IdentifyState {
        net,
        head: ClassifierHead::zeros(d),
        norms,
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let h = cfg.hidden;
    let mut opt = [
        AdamState::new(h * d),
        AdamState::new(h),
        AdamState::new(h),
        AdamState::new(1),
        AdamState::new(d),
        AdamState::new(1),
    ];
    let mut loss_curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, STREAM_ORDER, epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let ys: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, g) = state.loss_and_grads(&normed, batch, &ys)?;
            loss_curve.push(loss);
            let s = &mut state;
            opt[0].update(s.net.w1.data_mut(), &g.w1, &adam, cfg.lr);
            opt[1].update(&mut s.net.b1, &g.b1, &adam, cfg.lr);
            opt[2].update(&mut s.net.w2, &g.w2, &adam, cfg.lr);
            let mut b2 = [s.net.b2];
            opt[3].update(&mut b2, &[g.b2], &adam, cfg.lr);
            s.net.b2 = b2[0];
            opt[4].update(&mut s.head.weight, &g.head_w, &adam, cfg.lr);
            let mut hb = [s.head.bias];
            opt[5].update(&mut hb, &[g.head_b], &adam, cfg.lr);
            s.head.bias = hb[0];
        }
    }
    let scores = super::layer_scores(&state.net, &normed)?;
    let weights = weights_from_scores(&scores, cfg.aggregation)?;
    let mean_alpha = (0..l)
        .map(|c| (0..n).map(|i| scores.at(i, c)).sum::<f64>() / n as f64)
        .collect();
    Ok(Identification {
        report: CriticalLayerReport {
            pi: weights.pi.clone(),
            critical_index: weights.critical_index,
            mean_alpha,
            loss_curve,
        },
        weights,
        state,
    })
}

/// Extracts per-layer features from the frozen encoder and runs
/// [`identify_from_bundle`]. Also returns the raw feature bundle.
pub fn identify_critical_layer(
    encoder: &ToyEncoder,
    train: &[ImageSample],
    cfg: &IdentifyConfig,
    exec: Exec,
) -> Result<(Identification, LayerFeatureBundle)> {
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    check_classes(&labels)?;
    let before = parameter_checksum(encoder);
    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let ids: Vec<String> = train.iter().map(|s| s.id.clone()).collect();
    let bundle = forward_collect(encoder, &images, &ids, exec)?;
    let out = identify_from_bundle(&bundle, &labels, cfg)?;
    if parameter_checksum(encoder) != before {
        return Err(I2pError::InvalidArgument("encoder changed during identification".into()));
    }
    Ok((out, bundle))
}

/// Central-difference check of [`IdentifyState::loss_and_grads`]; returns
/// the number of entries checked and the worst relative error.
pub fn audit_scoring(state: &IdentifyState, bundle: &LayerFeatureBundle, labels: &[u8], step: f64) -> Result<(usize, f64)> {
    let idx: Vec<usize> = (0..bundle.samples()).collect();
    let (_, g) = state.loss_and_grads(bundle, &idx, labels)?;
    let loss = |s: &IdentifyState| -> Result<f64> { Ok(s.loss_and_grads(bundle, &idx, labels)?.0) };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut probe = state.clone();
    let mut check = |probe: &mut IdentifyState, get: &dyn Fn(&mut IdentifyState) -> &mut f64, analytic: f64| -> Result<()> {
        let orig = *get(probe);
        *get(probe) = orig + step;
        let up = loss(probe)?;
        *get(probe) = orig - step;
        let down = loss(probe)?;
        *get(probe) = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(crate::trainer::AUDIT_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
        count += 1;
        Ok(())
    };
    for i in 0..g.w1.len() {
        check(&mut probe, &|s| &mut s.net.w1.data_mut()[i], g.w1[i])?;
    }
    for i in 0..g.b1.len() {
        check(&mut probe, &|s| &mut s.net.b1[i], g.b1[i])?;
        check(&mut probe, &|s| &mut s.net.w2[i], g.w2[i])?;
    }
    check(&mut probe, &|s| &mut s.net.b2, g.b2)?;
    for i in 0..g.head_w.len() {
        check(&mut probe, &|s| &mut s.head.weight[i], g.head_w[i])?;
    }
    check(&mut probe, &|s| &mut s.head.bias, g.head_b)?;
    Ok((count, worst))
}
