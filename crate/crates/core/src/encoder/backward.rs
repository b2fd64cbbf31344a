use std::collections::BTreeMap;

use super::forward::{gelu_grad, BlockCache, ForwardTrace};
use super::model::{Block, BlockParam, LayerNorm, Linear, LinearKind, ParamId, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::numerics::{dgemm_strided, matmul_nn, matmul_tn};

/// Gradients keyed by parameter; only trainable parameters get an entry.
pub type EncoderGrads = BTreeMap<ParamId, Vec<f64>>;

/// Which entries of a parameter need a gradient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GradEntries {
    All,
    /// Sorted flat indices; other entries of the returned gradient stay zero.
    Only(Vec<usize>),
}

/// Set of parameters that receive gradients in [`ToyEncoder::backward`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GradSelection {
    entries: BTreeMap<ParamId, GradEntries>,
}

impl GradSelection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every parameter of `encoder`.
    pub fn all(encoder: &ToyEncoder) -> Self {
        Self::from_fn(encoder, |_| true)
    }

    pub fn from_fn(encoder: &ToyEncoder, f: impl Fn(ParamId) -> bool) -> Self {
        let entries = encoder
            .param_ids()
            .into_iter()
            .filter(|&id| f(id))
            .map(|id| (id, GradEntries::All))
            .collect();
        GradSelection { entries }
    }

    pub fn insert(&mut self, id: ParamId, entries: GradEntries) {
        if matches!(&entries, GradEntries::Only(v) if v.is_empty()) {
            return;
        }
        self.entries.insert(id, entries);
    }

    pub fn get(&self, id: ParamId) -> Option<&GradEntries> {
        self.entries.get(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.keys().copied()
    }
}

struct GradSink<'a> {
    grads: &'a mut EncoderGrads,
    sel: &'a GradSelection,
}

impl GradSink<'_> {
    fn wants(&self, id: ParamId) -> bool {
        self.sel.get(id).is_some()
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        self.grads.entry(id).or_insert_with(|| vec![0.0; len])
    }

    fn col_sums(&mut self, id: ParamId, dy: &[f64], width: usize) {
        if !self.wants(id) {
            return;
        }
        let g = self.slot(id, width);
        for row in dy.chunks_exact(width) {
            for (gj, r) in g.iter_mut().zip(row) {
                *gj += r;
            }
        }
    }

    /// `dW += dyᵀ x` and `db += Σ dy`, then returns `dx = dy W` if asked.
    fn linear(
        &mut self,
        layer: usize,
        kind: LinearKind,
        lin: &Linear,
        x: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
        acc: bool,
    ) {
        let (m, k) = (lin.out_dim(), lin.in_dim());
        let rows = dy.len() / m;
        let wid = ParamId::Block {
            layer,
            param: BlockParam::Weight(kind),
        };
        match self.sel.get(wid) {
            Some(GradEntries::All) => {
                let g = self.slot(wid, m * k);
                matmul_tn(dy, x, g, rows, m, k, true);
            }
            Some(GradEntries::Only(idx)) => {
                let idx = idx.clone();
                let g = self.slot(wid, m * k);
                for flat in idx {
                    let (o, j) = (flat / k, flat % k);
                    let mut s = 0.0;
                    for r in 0..rows {
                        s += dy[r * m + o] * x[r * k + j];
                    }
                    g[flat] += s;
                }
            }
            None => {}
        }
        self.col_sums(
            ParamId::Block {
                layer,
                param: BlockParam::Bias(kind),
            },
            dy,
            m,
        );
        if let Some(dx) = dx {
            matmul_nn(dy, lin.weight.data(), dx, rows, m, k, acc);
        }
    }

    /// LayerNorm backward; adds the input gradient into `dx`.
    #[allow(clippy::too_many_arguments)]
    fn layer_norm(
        &mut self,
        gain_id: ParamId,
        bias_id: ParamId,
        ln: &LayerNorm,
        xhat: &[f64],
        rstd: &[f64],
        dy: &[f64],
        dx: Option<&mut [f64]>,
    ) {
        let d = ln.gain.len();
        if self.wants(gain_id) {
            let g = self.slot(gain_id, d);
            for (row, xh) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                for j in 0..d {
                    g[j] += row[j] * xh[j];
                }
            }
        }
        self.col_sums(bias_id, dy, d);
        if let Some(dx) = dx {
            let mut dxhat = vec![0.0; d];
            for (r, (row, xh)) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                for j in 0..d {
                    dxhat[j] = row[j] * ln.gain[j];
                }
                let m1 = dxhat.iter().sum::<f64>() / d as f64;
                let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                let out = &mut dx[r * d..(r + 1) * d];
                for j in 0..d {
                    out[j] += rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
                }
            }
        }
    }
}

impl ToyEncoder {
    /// Reverse-mode gradients of a scalar loss whose gradient with respect to
    /// the CLS vector after block `l` is `d_cls[l - 1]` (`n × d`, or `None`
    /// when that layer is not read). Only parameters in `sel` receive
    /// gradient storage; backpropagation stops below the lowest block holding
    /// a selected parameter.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_cls: &[Option<Vec<f64>>],
        sel: &GradSelection,
    ) -> Result<EncoderGrads> {
        let (n, d, t) = (trace.n, self.width(), self.config().tokens());
        self.backward_impl(trace, d_cls, n * d, sel, |g, dx| {
            for s in 0..n {
                for j in 0..d {
                    dx[s * t * d + j] += g[s * d + j];
                }
            }
        })
    }

    /// [`backward`](Self::backward) with gradients for every token state:
    /// `d_tokens[l - 1]` is `n × T × d`.
    pub fn backward_tokens(
        &self,
        trace: &ForwardTrace,
        d_tokens: &[Option<Vec<f64>>],
        sel: &GradSelection,
    ) -> Result<EncoderGrads> {
        let len = trace.n * self.config().tokens() * self.width();
        self.backward_impl(trace, d_tokens, len, sel, |g, dx| {
            for (a, b) in dx.iter_mut().zip(g) {
                *a += b;
            }
        })
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        upstream: &[Option<Vec<f64>>],
        want: usize,
        sel: &GradSelection,
        inject: impl Fn(&[f64], &mut [f64]),
    ) -> Result<EncoderGrads> {
        if trace.blocks.len() != self.depth() {
            return Err(I2pError::InvalidArgument(
                "forward trace was recorded without activations".into(),
            ));
        }
        if upstream.len() > self.depth() {
            return Err(I2pError::Shape(format!(
                "{} layer gradients for depth {}",
                upstream.len(),
                self.depth()
            )));
        }
        let mut grads = EncoderGrads::new();
        let Some(lowest) = sel.ids().map(|id| id.layer()).min() else {
            return Ok(grads);
        };
        let Some(top) = upstream.iter().rposition(Option::is_some).map(|i| i + 1) else {
            return Ok(grads);
        };
        let c = self.config();
        let (n, d, t) = (trace.n, c.width, c.tokens());
        if let Some(id) = sel.ids().find(|id| id.layer() > self.depth()) {
            return Err(I2pError::UnknownLayer(id.to_string()));
        }
        let mut sink = GradSink {
            grads: &mut grads,
            sel,
        };
        let mut dx = vec![0.0; n * t * d];
        let stop = lowest.max(1);
        for layer in (stop..=top).rev() {
            if let Some(g) = &upstream[layer - 1] {
                if g.len() != want {
                    return Err(I2pError::Shape(format!(
                        "gradient for layer {layer} has {} values, want {want}",
                        g.len()
                    )));
                }
                inject(g, &mut dx);
            }
            let need_input = layer > lowest;
            dx = self.block_backward(
                layer,
                &self.blocks[layer - 1],
                &trace.blocks[layer - 1],
                dx,
                n,
                need_input,
                &mut sink,
            );
        }
        if lowest == 0 {
            self.embed_backward(&trace.patches, &dx, n, &mut sink);
        }
        for (id, g) in sink.grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(I2pError::NonFinite(format!("gradient of {id}")));
            }
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        layer: usize,
        block: &Block,
        cache: &BlockCache,
        dy: Vec<f64>,
        n: usize,
        need_input: bool,
        sink: &mut GradSink<'_>,
    ) -> Vec<f64> {
        let c = self.config();
        let (d, t, heads, hid) = (c.width, c.tokens(), c.heads, c.mlp_hidden);
        let rows = n * t;
        let bp = |param| ParamId::Block { layer, param };

        // MLP branch: x2 = x1 + mlp_out(gelu(mlp_in(ln2(x1))))
        let mut dx1 = dy.clone();
        let mut dg = vec![0.0; rows * hid];
        sink.linear(layer, LinearKind::MlpOut, &block.mlp_out, &cache.g, &dy, Some(&mut dg), false);
        for (g, &u) in dg.iter_mut().zip(&cache.u) {
            *g *= gelu_grad(u);
        }
        let mut db = vec![0.0; rows * d];
        sink.linear(layer, LinearKind::MlpIn, &block.mlp_in, &cache.b, &dg, Some(&mut db), false);
        sink.layer_norm(
            bp(BlockParam::Ln2Gain),
            bp(BlockParam::Ln2Bias),
            &block.ln2,
            &cache.ln2.xhat,
            &cache.ln2.rstd,
            &db,
            Some(&mut dx1),
        );

        // Attention branch: x1 = x + o(attn(q, k, v)(ln1(x)))
        let mut dctx = vec![0.0; rows * d];
        sink.linear(layer, LinearKind::O, &block.o, &cache.ctx, &dx1, Some(&mut dctx), false);
        let (dq, dk, dv) = attention_backward(cache, &dctx, n, t, d, heads);
        let mut da = vec![0.0; rows * d];
        sink.linear(layer, LinearKind::Q, &block.q, &cache.a, &dq, Some(&mut da), false);
        sink.linear(layer, LinearKind::K, &block.k, &cache.a, &dk, Some(&mut da), true);
        sink.linear(layer, LinearKind::V, &block.v, &cache.a, &dv, Some(&mut da), true);
        let mut dx = dx1;
        sink.layer_norm(
            bp(BlockParam::Ln1Gain),
            bp(BlockParam::Ln1Bias),
            &block.ln1,
            &cache.ln1.xhat,
            &cache.ln1.rstd,
            &da,
            need_input.then_some(&mut dx[..]),
        );
        dx
    }

    fn embed_backward(&self, patches: &[f64], dx: &[f64], n: usize, sink: &mut GradSink<'_>) {
        let c = self.config();
        let (d, t, np, pd) = (c.width, c.tokens(), c.patches(), c.patch_dim());
        if sink.wants(ParamId::Cls) {
            let g = sink.slot(ParamId::Cls, d);
            for s in 0..n {
                for j in 0..d {
                    g[j] += dx[s * t * d + j];
                }
            }
        }
        if sink.wants(ParamId::Pos) {
            let g = sink.slot(ParamId::Pos, t * d);
            for s in 0..n {
                for (gj, x) in g.iter_mut().zip(&dx[s * t * d..(s + 1) * t * d]) {
                    *gj += x;
                }
            }
        }
        let want_w = sink.wants(ParamId::EmbedWeight);
        let want_b = sink.wants(ParamId::EmbedBias);
        if want_w || want_b {
            let mut demb = Vec::with_capacity(n * np * d);
            for s in 0..n {
                demb.extend_from_slice(&dx[(s * t + 1) * d..(s + 1) * t * d]);
            }
            if want_w {
                let g = sink.slot(ParamId::EmbedWeight, d * pd);
                matmul_tn(&demb, patches, g, n * np, d, pd, true);
            }
            sink.col_sums(ParamId::EmbedBias, &demb, d);
        }
    }
}

fn attention_backward(
    cache: &BlockCache,
    dctx: &[f64],
    n: usize,
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * t * d];
    let mut dk = vec![0.0; n * t * d];
    let mut dv = vec![0.0; n * t * d];
    let mut dp = vec![0.0; t * t];
    for s in 0..n {
        for h in 0..heads {
            let off = s * t * d + h * dh;
            let p = &cache.probs[(s * heads + h) * t * t..(s * heads + h + 1) * t * t];
            // dP = dCtx_h V_hᵀ
            dgemm_strided(t, dh, t, &dctx[off..], d, 1, &cache.v[off..], 1, d, &mut dp, t, false);
            // dV_h = Pᵀ dCtx_h
            dgemm_strided(t, t, dh, p, 1, t, &dctx[off..], d, 1, &mut dv[off..], d, false);
            for (prow, drow) in p.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (x, &pv) in drow.iter_mut().zip(prow) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            // dQ_h = dS K_h, dK_h = dSᵀ Q_h
            dgemm_strided(t, t, dh, &dp, t, 1, &cache.k[off..], d, 1, &mut dq[off..], d, false);
            dgemm_strided(t, t, dh, &dp, 1, t, &cache.q[off..], d, 1, &mut dk[off..], d, false);
        }
    }
    (dq, dk, dv)
}
