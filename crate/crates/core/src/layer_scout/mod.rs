//! Critical layer identification: a small scoring network rates every
//! layer's CLS vector, a softmax turns the scores into a contribution
//! distribution, and the layer with the largest mean weight is selected.

mod identify;

use serde::{Deserialize, Serialize};

pub use identify::{
    audit_scoring, identify_critical_layer, identify_from_bundle, normalize_bundle, CriticalLayerReport,
    IdentifyConfig, IdentifyState, Identification, ScoringGrads,
};

use crate::encoder::LayerFeatureBundle;
use crate::error::{I2pError, Result};
use crate::numerics::{argmax_lowest, softmax, truncated_normal, rng_for, Tensor};

/// Where `b1` enters the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPlacement {
    /// `α = W2 · tanh(W1 f + b1) + b2`.
    #[default]
    Inside,
    /// `α = W2 · (tanh(W1 f) + b1) + b2`.
    Printed,
}

/// How the per-sample distributions select the critical layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Argmax of the dataset-mean distribution.
    #[default]
    Mean,
    /// Most frequent per-sample argmax.
    Vote,
}

/// Two-layer scorer `d → h → 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringNet {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    #[serde(default)]
    pub placement: BiasPlacement,
}

impl ScoringNet {
    pub fn zeros(d: usize, hidden: usize) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(I2pError::InvalidArgument("scoring net needs d, h >= 1".into()));
        }
        Ok(ScoringNet {
            w1: Tensor::zeros(&[hidden, d]),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            placement: BiasPlacement::Inside,
        })
    }

    /// `W1` truncated normal with std `1/√d`; everything else zero, so the
    /// initial distribution is uniform.
    pub fn init(d: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(d, hidden)?;
        let mut rng = rng_for(seed, 0x5C0_12E, 0);
        let std = 1.0 / (d as f64).sqrt();
        for w in net.w1.data_mut() {
            *w = truncated_normal(&mut rng, std);
        }
        Ok(net)
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    /// Hidden activations `tanh(W1 f [+ b1])`.
    pub(crate) fn hidden_act(&self, f: &[f64]) -> Vec<f64> {
        (0..self.hidden())
            .map(|k| {
                let u: f64 = self.w1.row(k).iter().zip(f).map(|(w, x)| w * x).sum();
                match self.placement {
                    BiasPlacement::Inside => (u + self.b1[k]).tanh(),
                    BiasPlacement::Printed => u.tanh(),
                }
            })
            .collect()
    }

    pub(crate) fn score_from_hidden(&self, t: &[f64]) -> f64 {
        let mut a = self.b2;
        for k in 0..self.hidden() {
            let tk = match self.placement {
                BiasPlacement::Inside => t[k],
                BiasPlacement::Printed => t[k] + self.b1[k],
            };
            a += self.w2[k] * tk;
        }
        a
    }
}

/// Layer score `α` of one feature vector.
pub fn score_layer(net: &ScoringNet, f: &[f64]) -> Result<f64> {
    if f.len() != net.input_dim() {
        return Err(I2pError::Shape(format!(
            "scorer expects {} features, got {}",
            net.input_dim(),
            f.len()
        )));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(I2pError::NonFinite("scorer input".into()));
    }
    Ok(net.score_from_hidden(&net.hidden_act(f)))
}

/// Dataset-mean contribution distribution and the selected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub pi: Vec<f64>,
    /// `n × L` per-sample distributions.
    pub per_sample_pi: Option<Tensor>,
    /// 1-based.
    pub critical_index: usize,
}

impl LayerWeights {
    /// Layers (1-based) with the `k` largest mean weights, ties to the lower
    /// index, in descending weight order.
    pub fn top_layers(&self, k: usize) -> Result<Vec<usize>> {
        let l = self.pi.len();
        if k == 0 || k > l {
            return Err(I2pError::InvalidArgument(format!("k = {k} outside 1..={l}")));
        }
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| self.pi[b].total_cmp(&self.pi[a]).then(a.cmp(&b)));
        Ok(order[..k].iter().map(|i| i + 1).collect())
    }

    fn sample_row(&self, i: usize) -> Result<&[f64]> {
        let p = self
            .per_sample_pi
            .as_ref()
            .ok_or_else(|| I2pError::InvalidArgument("per-sample weights missing".into()))?;
        if i >= p.rows() {
            return Err(I2pError::InvalidArgument(format!("no weights for sample {i}")));
        }
        Ok(p.row(i))
    }
}

/// `n × L` matrix of scores.
pub fn layer_scores(net: &ScoringNet, bundle: &LayerFeatureBundle) -> Result<Tensor> {
    let (n, l) = (bundle.samples(), bundle.layers());
    let mut out = Vec::with_capacity(n * l);
    for i in 0..n {
        for layer in 1..=l {
            out.push(score_layer(net, bundle.get(i, layer))?);
        }
    }
    Tensor::from_vec(&[n, l], out)
}

/// Per-sample softmax over the layer scores, their mean, and the selected
/// layer.
pub fn layer_distribution(net: &ScoringNet, bundle: &LayerFeatureBundle) -> Result<LayerWeights> {
    layer_distribution_with(net, bundle, Aggregation::Mean)
}

pub fn layer_distribution_with(
    net: &ScoringNet,
    bundle: &LayerFeatureBundle,
    aggregation: Aggregation,
) -> Result<LayerWeights> {
    weights_from_scores(&layer_scores(net, bundle)?, aggregation)
}

/// Builds [`LayerWeights`] from an `n × L` score matrix.
pub fn weights_from_scores(scores: &Tensor, aggregation: Aggregation) -> Result<LayerWeights> {
    let (n, l) = (scores.rows(), scores.cols());
    if n == 0 {
        return Err(I2pError::Empty("no samples to score".into()));
    }
    let mut per = Vec::with_capacity(n * l);
    let mut pi = vec![0.0; l];
    let mut votes = vec![0.0; l];
    for i in 0..n {
        let row = softmax(scores.row(i))?;
        votes[argmax_lowest(&row)] += 1.0;
        for (p, r) in pi.iter_mut().zip(&row) {
            *p += r;
        }
        per.extend(row);
    }
    pi.iter_mut().for_each(|p| *p /= n as f64);
    let critical = match aggregation {
        Aggregation::Mean => argmax_lowest(&pi),
        Aggregation::Vote => argmax_lowest(&votes),
    } + 1;
    Ok(LayerWeights {
        pi,
        per_sample_pi: Some(Tensor::from_vec(&[n, l], per)?),
        critical_index: critical,
    })
}

/// `Σ_ℓ π_ℓ f_ℓ` with sample `i`'s own distribution.
pub fn aggregate(bundle: &LayerFeatureBundle, weights: &LayerWeights, i: usize) -> Result<Vec<f64>> {
    let row = weights.sample_row(i)?;
    check_layers(bundle, row.len())?;
    let layers: Vec<(usize, f64)> = row.iter().enumerate().map(|(l, &p)| (l + 1, p)).collect();
    Ok(combine(bundle, i, &layers))
}

/// Convex combination over the `k` layers with the largest mean weight,
/// using sample `i`'s weights on those layers renormalized to sum to one.
/// `k = 1` reads the critical layer; `k = L` is [`aggregate`].
pub fn aggregate_topk(bundle: &LayerFeatureBundle, weights: &LayerWeights, i: usize, k: usize) -> Result<Vec<f64>> {
    let top = weights.top_layers(k)?;
    let row = weights.sample_row(i)?;
    check_layers(bundle, row.len())?;
    if k == 1 {
        return Ok(bundle.get(i, weights.critical_index).to_vec());
    }
    if k == row.len() {
        return aggregate(bundle, weights, i);
    }
    let mut chosen: Vec<usize> = top;
    chosen.sort_unstable();
    let z: f64 = chosen.iter().map(|&l| row[l - 1]).sum();
    let layers: Vec<(usize, f64)> = chosen.iter().map(|&l| (l, row[l - 1] / z)).collect();
    Ok(combine(bundle, i, &layers))
}

fn check_layers(bundle: &LayerFeatureBundle, l: usize) -> Result<()> {
    if bundle.layers() != l {
        return Err(I2pError::Shape(format!(
            "{l} layer weights for a bundle of {} layers",
            bundle.layers()
        )));
    }
    Ok(())
}

fn combine(bundle: &LayerFeatureBundle, i: usize, layers: &[(usize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; bundle.width()];
    for &(l, p) in layers {
        for (o, x) in out.iter_mut().zip(bundle.get(i, l)) {
            *o += p * x;
        }
    }
    out
}
