use super::model::{Block, LayerNorm, Linear, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::numerics::{dgemm_strided, matmul_nt, Tensor};
use crate::par::Exec;

pub(crate) const LN_EPS: f64 = 1e-5;
/// Samples stacked into one batched forward. Fixed so that results never
/// depend on the thread count.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, Default)]
pub(crate) struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Activations of one block kept for backpropagation and calibration.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockCache {
    pub ln1: LnCache,
    /// LayerNorm-1 output: input of Q, K and V.
    pub a: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `n × heads × T × T` attention probabilities.
    pub probs: Vec<f64>,
    /// Concatenated head outputs: input of O.
    pub ctx: Vec<f64>,
    pub attn_out: Vec<f64>,
    pub ln2: LnCache,
    /// LayerNorm-2 output: input of MLP-in.
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    /// GELU output: input of MLP-out.
    pub g: Vec<f64>,
    pub mlp_out: Vec<f64>,
}

/// Result of a batched forward pass: CLS vectors after every block and,
/// when requested, the activations needed for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub(crate) n: usize,
    pub(crate) patches: Vec<f64>,
    pub(crate) blocks: Vec<BlockCache>,
    /// Per layer, `n × d` CLS rows.
    pub(crate) cls: Vec<Vec<f64>>,
    /// Per layer, `n × T × d` token states; only kept with activations.
    pub(crate) tokens: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn samples(&self) -> usize {
        self.n
    }

    /// `n × d` CLS rows after block `layer` (1-based).
    pub fn cls(&self, layer: usize) -> &[f64] {
        &self.cls[layer - 1]
    }

    /// `n × T × d` token states after block `layer`, if activations were kept.
    pub fn tokens(&self, layer: usize) -> Option<&[f64]> {
        self.tokens.get(layer - 1).map(Vec::as_slice)
    }
}

/// Per-sample, per-layer CLS vectors: `features` has shape `n × L × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureBundle {
    pub features: Tensor,
    pub sample_ids: Vec<String>,
}

impl LayerFeatureBundle {
    pub fn samples(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn layers(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.features.shape()[2]
    }

    /// CLS vector of sample `i` after block `layer` (1-based).
    pub fn get(&self, i: usize, layer: usize) -> &[f64] {
        let (l, d) = (self.layers(), self.width());
        let start = (i * l + layer - 1) * d;
        &self.features.data()[start..start + d]
    }

    /// `n × d` matrix of one layer's features.
    pub fn layer_matrix(&self, layer: usize) -> Tensor {
        let n = self.samples();
        let d = self.width();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend_from_slice(self.get(i, layer));
        }
        Tensor::from_vec(&[n, d], out).expect("non-empty bundle")
    }

    /// First `layers` entries of every sample.
    pub fn truncate_layers(&self, layers: usize) -> LayerFeatureBundle {
        let n = self.samples();
        let d = self.width();
        let mut out = Vec::with_capacity(n * layers * d);
        for i in 0..n {
            for l in 1..=layers {
                out.extend_from_slice(self.get(i, l));
            }
        }
        LayerFeatureBundle {
            features: Tensor::from_vec(&[n, layers, d], out).expect("non-empty"),
            sample_ids: self.sample_ids.clone(),
        }
    }
}

pub(crate) fn layer_norm(
    x: &[f64],
    d: usize,
    ln: &LayerNorm,
    out: &mut [f64],
    cache: Option<&mut LnCache>,
) {
    let rows = x.len() / d;
    let mut xhat_all = Vec::new();
    let mut rstd_all = Vec::new();
    let keep = cache.is_some();
    if keep {
        xhat_all.resize(x.len(), 0.0);
        rstd_all.resize(rows, 0.0);
    }
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            let xh = (row[j] - mean) * rstd;
            o[j] = xh * ln.gain[j] + ln.bias[j];
            if keep {
                xhat_all[r * d + j] = xh;
            }
        }
        if keep {
            rstd_all[r] = rstd;
        }
    }
    if let Some(c) = cache {
        c.xhat = xhat_all;
        c.rstd = rstd_all;
    }
}

pub(crate) fn apply_linear(x: &[f64], lin: &Linear, out: &mut [f64]) {
    let k = lin.in_dim();
    let m = lin.out_dim();
    let rows = x.len() / k;
    matmul_nt(x, lin.weight.data(), out, rows, k, m, false);
    for r in 0..rows {
        for (o, b) in out[r * m..(r + 1) * m].iter_mut().zip(&lin.bias) {
            *o += b;
        }
    }
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::erf(u * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(u * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + u * pdf
}

/// Multi-head self-attention core for `n` samples of `t` tokens.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    t: usize,
    d: usize,
    heads: usize,
    probs: &mut [f64],
    ctx: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for s in 0..n {
        let base = s * t * d;
        for h in 0..heads {
            let off = base + h * dh;
            let p = &mut probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
            // scores = Q_h K_hᵀ
            dgemm_strided(t, dh, t, &q[off..], d, 1, &k[off..], 1, d, p, t, false);
            for row in p.chunks_exact_mut(t) {
                let mut max = f64::NEG_INFINITY;
                for x in row.iter_mut() {
                    *x *= scale;
                    max = max.max(*x);
                }
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                let inv = 1.0 / z;
                for x in row.iter_mut() {
                    *x *= inv;
                }
            }
            dgemm_strided(t, t, dh, p, t, 1, &v[off..], d, 1, &mut ctx[off..], d, false);
        }
    }
}

impl ToyEncoder {
    pub(crate) fn check_images(&self, images: &[&[f64]]) -> Result<()> {
        let want = self.config().pixels();
        for (i, img) in images.iter().enumerate() {
            if img.len() != want {
                return Err(I2pError::Shape(format!(
                    "image {i} has {} values, encoder expects {want}",
                    img.len()
                )));
            }
            if img.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
                return Err(I2pError::InvalidArgument(format!(
                    "image {i} has values outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Rearranges HWC images into `n·N × P` patch rows.
    pub(crate) fn patchify(&self, images: &[&[f64]]) -> Vec<f64> {
        let c = self.config();
        let (s, p, g) = (c.image_size, c.patch_size, c.grid());
        let pd = c.patch_dim();
        let mut out = Vec::with_capacity(images.len() * c.patches() * pd);
        for img in images {
            for gy in 0..g {
                for gx in 0..g {
                    for dy in 0..p {
                        let y = gy * p + dy;
                        let start = (y * s + gx * p) * 3;
                        out.extend_from_slice(&img[start..start + p * 3]);
                    }
                }
            }
        }
        out
    }

    fn embed_tokens(&self, patches: &[f64], n: usize) -> Vec<f64> {
        let c = self.config();
        let (d, t, np) = (c.width, c.tokens(), c.patches());
        let mut emb = vec![0.0; n * np * d];
        apply_linear(patches, &self.embed, &mut emb);
        let mut x = vec![0.0; n * t * d];
        let pos = self.pos.data();
        for s in 0..n {
            let xs = &mut x[s * t * d..(s + 1) * t * d];
            for j in 0..d {
                xs[j] = self.cls[j] + pos[j];
            }
            for tok in 1..t {
                let src = &emb[(s * np + tok - 1) * d..(s * np + tok) * d];
                for j in 0..d {
                    xs[tok * d + j] = src[j] + pos[tok * d + j];
                }
            }
        }
        x
    }

    fn block_forward(&self, block: &Block, x: &mut [f64], n: usize, keep: bool) -> Option<BlockCache> {
        let c = self.config();
        let (d, t, heads, hid) = (c.width, c.tokens(), c.heads, c.mlp_hidden);
        let rows = n * t;
        let mut cache = BlockCache::default();

        let mut a = vec![0.0; rows * d];
        layer_norm(x, d, &block.ln1, &mut a, keep.then_some(&mut cache.ln1));
        let mut q = vec![0.0; rows * d];
        let mut k = vec![0.0; rows * d];
        let mut v = vec![0.0; rows * d];
        apply_linear(&a, &block.q, &mut q);
        apply_linear(&a, &block.k, &mut k);
        apply_linear(&a, &block.v, &mut v);
        let mut probs = vec![0.0; n * heads * t * t];
        let mut ctx = vec![0.0; rows * d];
        attention(&q, &k, &v, n, t, d, heads, &mut probs, &mut ctx);
        let mut attn_out = vec![0.0; rows * d];
        apply_linear(&ctx, &block.o, &mut attn_out);
        for (xi, ai) in x.iter_mut().zip(&attn_out) {
            *xi += ai;
        }

        let mut b = vec![0.0; rows * d];
        layer_norm(x, d, &block.ln2, &mut b, keep.then_some(&mut cache.ln2));
        let mut u = vec![0.0; rows * hid];
        apply_linear(&b, &block.mlp_in, &mut u);
        let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
        let mut m = vec![0.0; rows * d];
        apply_linear(&g, &block.mlp_out, &mut m);
        for (xi, mi) in x.iter_mut().zip(&m) {
            *xi += mi;
        }

        keep.then_some(BlockCache {
            a,
            q,
            k,
            v,
            probs,
            ctx,
            attn_out,
            b,
            u,
            g,
            mlp_out: m,
            ..cache
        })
    }

    /// Batched forward over `images`. With `keep` the per-block activations
    /// are retained for backpropagation.
    pub fn forward_trace(&self, images: &[&[f64]], keep: bool) -> Result<ForwardTrace> {
        self.check_images(images)?;
        let n = images.len();
        let c = self.config();
        let (d, t) = (c.width, c.tokens());
        let patches = self.patchify(images);
        let mut x = self.embed_tokens(&patches, n);
        let mut blocks = Vec::new();
        let mut cls = Vec::with_capacity(self.depth());
        let mut tokens = Vec::new();
        for block in &self.blocks {
            if let Some(cache) = self.block_forward(block, &mut x, n, keep) {
                blocks.push(cache);
                tokens.push(x.clone());
            }
            let mut rows = Vec::with_capacity(n * d);
            for s in 0..n {
                rows.extend_from_slice(&x[s * t * d..s * t * d + d]);
            }
            cls.push(rows);
        }
        Ok(ForwardTrace {
            n,
            patches: if keep { patches } else { Vec::new() },
            blocks,
            cls,
            tokens,
        })
    }

    /// `n × L × d` CLS features, processed in fixed chunks of [`CHUNK`]
    /// samples.
    pub fn forward_features(&self, images: &[&[f64]], exec: Exec) -> Result<Tensor> {
        let n = images.len();
        if n == 0 {
            return Err(I2pError::Empty("forward on empty batch".into()));
        }
        self.check_images(images)?;
        let chunks: Vec<&[&[f64]]> = images.chunks(CHUNK).collect();
        let parts = exec.map(&chunks, |chunk| self.forward_trace(chunk, false));
        let (l, d) = (self.depth(), self.width());
        let mut out = Vec::with_capacity(n * l * d);
        for part in parts {
            let tr = part?;
            for s in 0..tr.n {
                for layer in 0..l {
                    out.extend_from_slice(&tr.cls[layer][s * d..(s + 1) * d]);
                }
            }
        }
        let t = Tensor::from_vec(&[n, l, d], out)?;
        t.ensure_finite("encoder features")?;
        Ok(t)
    }
}

/// CLS vector after every block for each image.
pub fn forward_collect(
    encoder: &ToyEncoder,
    images: &[&[f64]],
    sample_ids: &[String],
    exec: Exec,
) -> Result<LayerFeatureBundle> {
    if sample_ids.len() != images.len() {
        return Err(I2pError::Shape(format!(
            "{} ids for {} images",
            sample_ids.len(),
            images.len()
        )));
    }
    Ok(LayerFeatureBundle {
        features: encoder.forward_features(images, exec)?,
        sample_ids: sample_ids.to_vec(),
    })
}

/// Per-layer CLS-query attention. `per_head[l][h]` is the full softmax row
/// (CLS plus patches); `patch_weights[l]` averages the patch entries over
/// heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub per_head: Vec<Vec<Vec<f64>>>,
    pub patch_weights: Vec<Vec<f64>>,
}

pub fn trace_attention(encoder: &ToyEncoder, image: &[f64]) -> Result<AttentionTrace> {
    let tr = encoder.forward_trace(&[image], true)?;
    let c = encoder.config();
    let (t, heads) = (c.tokens(), c.heads);
    let mut per_head = Vec::new();
    let mut patch_weights = Vec::new();
    for cache in &tr.blocks {
        let rows: Vec<Vec<f64>> = (0..heads)
            .map(|h| cache.probs[h * t * t..h * t * t + t].to_vec())
            .collect();
        let avg: Vec<f64> = (1..t)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / heads as f64)
            .collect();
        per_head.push(rows);
        patch_weights.push(avg);
    }
    Ok(AttentionTrace {
        per_head,
        patch_weights,
    })
}
