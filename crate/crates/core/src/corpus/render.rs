use rand::Rng;

use crate::numerics::{sigmoid, standard_normal};

/// Shape family of a rendered object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Ring];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A rendered scene plus the kind of its largest shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub pixels: Vec<f64>,
    pub largest: ShapeKind,
}

fn color<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Smooth two-color gradient, low-pass noise and one to three soft-edged
/// shapes, rendered at `size × size` in HWC order and clamped to `[0, 1]`.
pub fn render_scene<R: Rng>(rng: &mut R, size: usize) -> Scene {
    let s = size as f64;
    let c0 = color(rng, 0.15, 0.85);
    let c1 = color(rng, 0.15, 0.85);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());

    let grid = (size / 8).max(2) + 1;
    let noise: Vec<f64> = (0..grid * grid * 3)
        .map(|_| 0.05 * standard_normal(rng))
        .collect();

    let mut px = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let t = ((u - 0.5) * ct + (v - 0.5) * st + 0.5).clamp(0.0, 1.0);
            // Bilinear lookup into the coarse noise grid.
            let gx = u * (grid - 1) as f64;
            let gy = v * (grid - 1) as f64;
            let (ix, iy) = ((gx as usize).min(grid - 2), (gy as usize).min(grid - 2));
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            for ch in 0..3 {
                let at = |i: usize, j: usize| noise[(j * grid + i) * 3 + ch];
                let n = at(ix, iy) * (1.0 - fx) * (1.0 - fy)
                    + at(ix + 1, iy) * fx * (1.0 - fy)
                    + at(ix, iy + 1) * (1.0 - fx) * fy
                    + at(ix + 1, iy + 1) * fx * fy;
                px[(y * size + x) * 3 + ch] = c0[ch] + (c1[ch] - c0[ch]) * t + n;
            }
        }
    }

    let count = rng.random_range(1..=3);
    let mut largest = (0.0, ShapeKind::Disk);
    for _ in 0..count {
        let kind = ShapeKind::ALL[rng.random_range(0..3)];
        let cx = rng.random_range(0.2..0.8) * s;
        let cy = rng.random_range(0.2..0.8) * s;
        let r = rng.random_range(0.12..0.3) * s;
        let angle: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let soft = rng.random_range(0.6..1.5);
        let col = color(rng, 0.0, 1.0);
        if r > largest.0 {
            largest = (r, kind);
        }
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let dist = match kind {
                    ShapeKind::Disk => (dx * dx + dy * dy).sqrt() - r,
                    ShapeKind::Square => {
                        let u = dx * ca + dy * sa;
                        let v = -dx * sa + dy * ca;
                        u.abs().max(v.abs()) - 0.8 * r
                    }
                    ShapeKind::Ring => ((dx * dx + dy * dy).sqrt() - r).abs() - 0.3 * r,
                };
                let alpha = sigmoid(-dist / soft);
                for ch in 0..3 {
                    let p = &mut px[(y * size + x) * 3 + ch];
                    *p = *p * (1.0 - alpha) + col[ch] * alpha;
                }
            }
        }
    }
    for p in &mut px {
        *p = p.clamp(0.0, 1.0);
    }
    Scene {
        pixels: px,
        largest: largest.1,
    }
}
