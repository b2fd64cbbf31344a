//! Stand-in pretraining for the toy encoder. A large pretrained vision model
//! is out of reach at desk scale, so the encoder is trained on procedurally
//! rendered scenes with a multi-task objective. At the middle block, linear
//! readouts of the patch tokens regress local band-pass energy and a readout
//! of the CLS token regresses global image statistics. A readout of the last
//! block regresses the coarse colour layout of the clean scene, and the
//! blocks above the middle are pushed towards invariance between two
//! perturbed views of the same scene.

mod perturb;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use perturb::{blur, Perturbation};

use crate::corpus::{band_energies, render_scene};
use crate::encoder::{init_encoder, EncoderConfig, GradSelection, ParamId, ToyEncoder, INIT_STD};
use crate::error::{I2pError, Result};
use crate::numerics::{rng_for, truncated_normal};
use crate::trainer::{AdamConfig, AdamState};

const SCENE_STREAM: u64 = 0x5052_4554;
const VIEW_STREAM: u64 = 0x5649_4557;
const HEAD_STREAM: u64 = 0x4845_4144;
const REFERENCE_SCENES: usize = 256;
const LAYOUT_SCALE: f64 = 0.2;

/// Radial band edges (cycles per pixel) of the regressed spectrum.
pub const STAT_BANDS: [f64; 5] = [0.0, 0.125, 0.25, 0.375, 0.75];
/// Log band energies, log mean squared neighbour difference, brightness.
pub const STAT_DIM: usize = 6;
/// Side of the colour layout grid.
pub const LAYOUT_GRID: usize = 2;
pub const LAYOUT_DIM: usize = LAYOUT_GRID * LAYOUT_GRID * 3;
/// Log energies of the high-pass and band-pass residuals of one patch.
pub const PATCH_DIM: usize = 2;
/// Added to every energy before the logarithm so that differences far below
/// visible contrast do not dominate the targets.
pub const ENERGY_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Block whose CLS regresses the statistics; 0 means `depth / 2`.
    pub stats_layer: usize,
    pub stats_weight: f64,
    /// Block whose patch tokens regress local energy; 0 means the statistics
    /// block.
    pub patch_layer: usize,
    pub patch_weight: f64,
    pub layout_weight: f64,
    pub invariance_weight: f64,
    /// Rescales the initial linear weights to standard deviation
    /// `1/sqrt(fan_in)` before training.
    pub fan_in_init: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1600,
            batch_size: 8,
            lr: 1e-3,
            warmup: 50,
            stats_layer: 0,
            stats_weight: 1.0,
            patch_layer: 0,
            patch_weight: 1.0,
            layout_weight: 1.0,
            invariance_weight: 1.0,
            fan_in_init: true,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(I2pError::InvalidArgument("pretrain batch_size and lr must be positive".into()));
        }
        let m = self.resolved_stats_layer(depth);
        if m == 0 || m >= depth {
            return Err(I2pError::InvalidArgument(format!(
                "stats layer {m} must lie strictly inside 1..{depth}"
            )));
        }
        let p = self.resolved_patch_layer(depth);
        if p == 0 || p > depth {
            return Err(I2pError::InvalidArgument(format!("patch layer {p} outside 1..={depth}")));
        }
        Ok(())
    }

    pub fn resolved_patch_layer(&self, depth: usize) -> usize {
        if self.patch_layer == 0 {
            self.resolved_stats_layer(depth)
        } else {
            self.patch_layer
        }
    }

    pub fn resolved_stats_layer(&self, depth: usize) -> usize {
        if self.stats_layer == 0 {
            depth / 2
        } else {
            self.stats_layer
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        let warm = if self.warmup == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup as f64).min(1.0)
        };
        let progress = step as f64 / self.steps.max(1) as f64;
        let cosine = 0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * warm * cosine
    }
}

/// Raw low-level statistics of one image.
pub fn image_statistics(pixels: &[f64], size: usize) -> [f64; STAT_DIM] {
    let e = band_energies(pixels, size, &STAT_BANDS);
    let mut diff = 0.0;
    let mut count = 0usize;
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let p = pixels[(y * size + x) * 3 + c];
                if x + 1 < size {
                    diff += (p - pixels[(y * size + x + 1) * 3 + c]).powi(2);
                    count += 1;
                }
                if y + 1 < size {
                    diff += (p - pixels[((y + 1) * size + x) * 3 + c]).powi(2);
                    count += 1;
                }
            }
        }
    }
    let bright = pixels.iter().sum::<f64>() / pixels.len() as f64;
    [
        (e[0] + ENERGY_FLOOR).ln(),
        (e[1] + ENERGY_FLOOR).ln(),
        (e[2] + ENERGY_FLOOR).ln(),
        (e[3] + ENERGY_FLOOR).ln(),
        (diff / count as f64 + ENERGY_FLOOR).ln(),
        bright,
    ]
}

/// Per-patch local energies in raster order: log mean square of `x − Bx` and
/// of `Bx − BBx`, with `B` the binomial blur.
pub fn patch_statistics(pixels: &[f64], size: usize, patch: usize) -> Vec<[f64; PATCH_DIM]> {
    let b1 = blur(pixels, size);
    let b2 = blur(&b1, size);
    let grid = size / patch;
    let mut out = vec![[0.0; PATCH_DIM]; grid * grid];
    let norm = (patch * patch * 3) as f64;
    for y in 0..grid * patch {
        for x in 0..grid * patch {
            let e = &mut out[(y / patch) * grid + x / patch];
            for c in 0..3 {
                let i = (y * size + x) * 3 + c;
                e[0] += (pixels[i] - b1[i]).powi(2) / norm;
                e[1] += (b1[i] - b2[i]).powi(2) / norm;
            }
        }
    }
    for e in &mut out {
        for v in e.iter_mut() {
            *v = (*v + ENERGY_FLOOR).ln();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainStep {
    pub step: usize,
    pub lr: f64,
    pub patch_loss: f64,
    pub stats_loss: f64,
    pub layout_loss: f64,
    pub invariance_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    pub steps: Vec<PretrainStep>,
}

impl PretrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.steps {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| I2pError::io(path, e))
    }
}

struct View {
    pixels: Vec<f64>,
    patches: Vec<[f64; PATCH_DIM]>,
    stats: [f64; STAT_DIM],
    layout: [f64; LAYOUT_DIM],
}

/// Mean colour of each cell of a `LAYOUT_GRID × LAYOUT_GRID` grid.
pub fn colour_layout(pixels: &[f64], size: usize) -> [f64; LAYOUT_DIM] {
    let cell = size / LAYOUT_GRID;
    let mut out = [0.0; LAYOUT_DIM];
    for y in 0..cell * LAYOUT_GRID {
        for x in 0..cell * LAYOUT_GRID {
            let g = (y / cell) * LAYOUT_GRID + x / cell;
            for c in 0..3 {
                out[g * 3 + c] += pixels[(y * size + x) * 3 + c] / (cell * cell) as f64;
            }
        }
    }
    out
}

fn make_pair(seed: u64, index: u64, size: usize, patch: usize) -> [View; 2] {
    let scene = render_scene(&mut rng_for(seed, SCENE_STREAM, index), size);
    let mut rng = rng_for(seed, VIEW_STREAM, index);
    let layout = colour_layout(&scene.pixels, size);
    [0, 1].map(|_| {
        let p = Perturbation::draw(&mut rng);
        let pixels = p.apply(&mut rng, &scene.pixels, size);
        View {
            patches: patch_statistics(&pixels, size, patch),
            stats: image_statistics(&pixels, size),
            pixels,
            layout,
        }
    })
}

/// Linear readout `out × d` plus bias.
struct Readout {
    w: Vec<f64>,
    b: Vec<f64>,
    out: usize,
    d: usize,
    sw: AdamState,
    sb: AdamState,
}

impl Readout {
    fn new<R: Rng>(rng: &mut R, out: usize, d: usize) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        Readout {
            w: (0..out * d).map(|_| truncated_normal(rng, std)).collect(),
            b: vec![0.0; out],
            out,
            d,
            sw: AdamState::new(out * d),
            sb: AdamState::new(out),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| self.b[o] + self.w[o * self.d..(o + 1) * self.d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients for `dy` at input `x` and returns `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.d];
        for o in 0..self.out {
            gb[o] += dy[o];
            let row = &self.w[o * self.d..(o + 1) * self.d];
            for j in 0..self.d {
                gw[o * self.d + j] += dy[o] * x[j];
                dx[j] += dy[o] * row[j];
            }
        }
        dx
    }
}

fn rescale_to_fan_in(enc: &mut ToyEncoder) -> Result<()> {
    for id in enc.param_ids() {
        if id == ParamId::EmbedWeight || id.as_linear_weight().is_some() {
            let fan_in = enc.param_shape(id)?[1];
            let factor = 1.0 / ((fan_in as f64).sqrt() * INIT_STD);
            enc.param_mut(id)?.iter_mut().for_each(|w| *w *= factor);
        }
    }
    Ok(())
}

/// Per-column mean and standard deviation.
fn moments<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; k];
    let mut count = 0usize;
    for r in rows.clone() {
        mu.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        count += 1;
    }
    mu.iter_mut().for_each(|a| *a /= count as f64);
    let mut var = vec![0.0; k];
    for r in rows {
        var.iter_mut().zip(r).zip(&mu).for_each(|((a, x), m)| *a += (x - m).powi(2));
    }
    let sd = var.iter().map(|v| (v / count as f64).sqrt().max(1e-6)).collect();
    (mu, sd)
}

/// Pretrains a freshly initialized encoder. Deterministic given the two
/// configurations.
pub fn pretrain(config: EncoderConfig, cfg: &PretrainConfig) -> Result<(ToyEncoder, PretrainLog)> {
    pretrain_with(config, cfg, |_| {})
}

/// [`pretrain`] with a callback after every optimizer step.
pub fn pretrain_with(
    config: EncoderConfig,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&PretrainStep),
) -> Result<(ToyEncoder, PretrainLog)> {
    config.validate()?;
    cfg.validate(config.depth)?;
    let mut enc = init_encoder(config)?;
    if cfg.fan_in_init {
        rescale_to_fan_in(&mut enc)?;
    }
    let (size, d, depth) = (config.image_size, config.width, config.depth);
    let m = cfg.resolved_stats_layer(depth);
    let pl = cfg.resolved_patch_layer(depth);
    let (patch, t) = (config.patch_size, config.tokens());

    // Fixed standardization of the regression targets.
    let reference: Vec<View> = (0..REFERENCE_SCENES as u64)
        .flat_map(|i| make_pair(cfg.seed ^ 0xA5A5, i, size, patch))
        .collect();
    let (mu, sd) = moments(reference.iter().map(|v| &v.stats[..]), STAT_DIM);
    let (pmu, psd) = moments(reference.iter().flat_map(|v| v.patches.iter().map(|p| &p[..])), PATCH_DIM);

    let mut hrng = rng_for(cfg.seed, HEAD_STREAM, 0);
    let mut stats_head = Readout::new(&mut hrng, STAT_DIM, d);
    let mut patch_head = Readout::new(&mut hrng, PATCH_DIM, d);
    let mut layout_head = Readout::new(&mut hrng, LAYOUT_DIM, d);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut states: BTreeMap<ParamId, AdamState> = BTreeMap::new();
    let sel = GradSelection::all(&enc);
    let mut log = PretrainLog::default();

    for step in 0..cfg.steps {
        let views: Vec<View> = (0..cfg.batch_size)
            .flat_map(|b| make_pair(cfg.seed, (step * cfg.batch_size + b) as u64, size, patch))
            .collect();
        let n = views.len();
        let images: Vec<&[f64]> = views.iter().map(|v| v.pixels.as_slice()).collect();
        let trace = enc.forward_trace(&images, true)?;
        let mut d_cls: Vec<Option<Vec<f64>>> = vec![None; depth];

        // Local energy regression on the patch tokens of an early block.
        let mut gw_p = vec![0.0; patch_head.w.len()];
        let mut gb_p = vec![0.0; PATCH_DIM];
        let mut patch_loss = 0.0;
        let mut dp = vec![0.0; n * t * d];
        let toks = trace.tokens(pl).expect("activations kept");
        let count = (n * (t - 1) * PATCH_DIM) as f64;
        for (i, v) in views.iter().enumerate() {
            for (j, target) in v.patches.iter().enumerate() {
                let off = (i * t + j + 1) * d;
                let x = &toks[off..off + d];
                let pred = patch_head.apply(x);
                let dy: Vec<f64> = (0..PATCH_DIM)
                    .map(|k| {
                        let r = pred[k] - (target[k] - pmu[k]) / psd[k];
                        patch_loss += r * r / count;
                        cfg.patch_weight * 2.0 * r / count
                    })
                    .collect();
                let dx = patch_head.backward(x, &dy, &mut gw_p, &mut gb_p);
                dp[off..off + d].copy_from_slice(&dx);
            }
        }

        // Statistics regression at the middle block.
        let mut gw_s = vec![0.0; stats_head.w.len()];
        let mut gb_s = vec![0.0; STAT_DIM];
        let mut stats_loss = 0.0;
        let mut dm = vec![0.0; n * d];
        let cls_m = trace.cls(m);
        for (i, v) in views.iter().enumerate() {
            let x = &cls_m[i * d..(i + 1) * d];
            let pred = stats_head.apply(x);
            let dy: Vec<f64> = (0..STAT_DIM)
                .map(|k| {
                    let r = pred[k] - (v.stats[k] - mu[k]) / sd[k];
                    stats_loss += r * r / (STAT_DIM * n) as f64;
                    cfg.stats_weight * 2.0 * r / (STAT_DIM * n) as f64
                })
                .collect();
            let dx = stats_head.backward(x, &dy, &mut gw_s, &mut gb_s);
            dm[i * d..(i + 1) * d].copy_from_slice(&dx);
        }
        d_cls[m - 1] = Some(dm);

        // Invariance above the middle block, ramping up with depth.
        let mut invariance_loss = 0.0;
        for l in (m + 1)..=depth {
            let weight = (l - m) as f64 / (depth - m) as f64;
            let cls = trace.cls(l);
            let mut mean = vec![0.0; d];
            for row in cls.chunks_exact(d) {
                for (a, x) in mean.iter_mut().zip(row) {
                    *a += x / n as f64;
                }
            }
            let var = cls
                .chunks_exact(d)
                .flat_map(|row| row.iter().zip(&mean).map(|(x, a)| (x - a).powi(2)))
                .sum::<f64>()
                / (n * d) as f64
                + 1e-8;
            let pairs = n / 2;
            let scale = weight / (var * (pairs * d) as f64);
            let g = d_cls[l - 1].get_or_insert_with(|| vec![0.0; n * d]);
            for p in 0..pairs {
                let (a, b) = (2 * p, 2 * p + 1);
                for j in 0..d {
                    let diff = cls[a * d + j] - cls[b * d + j];
                    invariance_loss += scale * diff * diff;
                    g[a * d + j] += cfg.invariance_weight * 2.0 * scale * diff;
                    g[b * d + j] -= cfg.invariance_weight * 2.0 * scale * diff;
                }
            }
        }

        // Layout regression at the last block.
        let mut gw_c = vec![0.0; layout_head.w.len()];
        let mut gb_c = vec![0.0; LAYOUT_DIM];
        let mut layout_loss = 0.0;
        let cls_l = trace.cls(depth);
        let g = d_cls[depth - 1].get_or_insert_with(|| vec![0.0; n * d]);
        for (i, v) in views.iter().enumerate() {
            let x = &cls_l[i * d..(i + 1) * d];
            let pred = layout_head.apply(x);
            let dy: Vec<f64> = (0..LAYOUT_DIM)
                .map(|k| {
                    let r = pred[k] - (v.layout[k] - 0.5) / LAYOUT_SCALE;
                    layout_loss += r * r / (LAYOUT_DIM * n) as f64;
                    cfg.layout_weight * 2.0 * r / (LAYOUT_DIM * n) as f64
                })
                .collect();
            let dx = layout_head.backward(x, &dy, &mut gw_c, &mut gb_c);
            for (gj, dj) in g[i * d..(i + 1) * d].iter_mut().zip(&dx) {
                *gj += dj;
            }
        }

        let mut d_tok: Vec<Option<Vec<f64>>> = d_cls
            .into_iter()
            .map(|g| {
                g.map(|g| {
                    let mut full = vec![0.0; n * t * d];
                    for s in 0..n {
                        full[s * t * d..s * t * d + d].copy_from_slice(&g[s * d..(s + 1) * d]);
                    }
                    full
                })
            })
            .collect();
        match &mut d_tok[pl - 1] {
            Some(g) => g.iter_mut().zip(&dp).for_each(|(a, b)| *a += b),
            slot => *slot = Some(dp),
        }
        let grads = enc.backward_tokens(&trace, &d_tok, &sel)?;
        let lr = cfg.lr_at(step);
        for (id, gr) in &grads {
            let p = enc.param_mut(*id)?;
            states.entry(*id).or_insert_with(|| AdamState::new(p.len())).update(p, gr, &adam, lr);
        }
        patch_head.sw.update(&mut patch_head.w, &gw_p, &adam, lr);
        patch_head.sb.update(&mut patch_head.b, &gb_p, &adam, lr);
        stats_head.sw.update(&mut stats_head.w, &gw_s, &adam, lr);
        stats_head.sb.update(&mut stats_head.b, &gb_s, &adam, lr);
        layout_head.sw.update(&mut layout_head.w, &gw_c, &adam, lr);
        layout_head.sb.update(&mut layout_head.b, &gb_c, &adam, lr);

        if !(patch_loss.is_finite() && stats_loss.is_finite() && layout_loss.is_finite() && invariance_loss.is_finite()) {
            return Err(I2pError::NonFinite(format!("pretraining loss at step {step}")));
        }
        let entry = PretrainStep {
            step: step + 1,
            lr,
            patch_loss,
            stats_loss,
            layout_loss,
            invariance_loss,
        };
        on_step(&entry);
        log.steps.push(entry);
    }
    Ok((enc, log))
}
