use rand::Rng;

use crate::numerics::standard_normal;

/// Bounds of noise and grating amplitudes, drawn log-uniformly.
pub const AMPLITUDE_RANGE: (f64, f64) = (0.005, 0.3);

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

/// Generic low-level photometric perturbations used to build two views of
/// one scene during pretraining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Identity,
    Noise { std: f64 },
    Blur,
    Sharpen { amount: f64 },
    /// Additive plane wave; `freq` in cycles per pixel.
    Grating { freq: f64, angle: f64, phase: f64, amplitude: f64 },
}

impl Perturbation {
    pub fn draw<R: Rng>(rng: &mut R) -> Self {
        match rng.random_range(0..5) {
            0 => Perturbation::Identity,
            1 => Perturbation::Noise {
                std: log_uniform(rng, AMPLITUDE_RANGE),
            },
            2 => Perturbation::Blur,
            3 => Perturbation::Sharpen {
                amount: rng.random_range(0.3..1.5),
            },
            _ => Perturbation::Grating {
                freq: rng.random_range(0.05..0.5),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amplitude: log_uniform(rng, AMPLITUDE_RANGE),
            },
        }
    }

    pub fn apply<R: Rng>(&self, rng: &mut R, pixels: &[f64], size: usize) -> Vec<f64> {
        let mut out = match *self {
            Perturbation::Identity => pixels.to_vec(),
            Perturbation::Noise { std } => pixels.iter().map(|p| p + std * standard_normal(rng)).collect(),
            Perturbation::Blur => blur(pixels, size),
            Perturbation::Sharpen { amount } => {
                let b = blur(pixels, size);
                pixels.iter().zip(&b).map(|(p, q)| p + amount * (p - q)).collect()
            }
            Perturbation::Grating {
                freq,
                angle,
                phase,
                amplitude,
            } => {
                let (fx, fy) = (freq * angle.cos(), freq * angle.sin());
                let mut out = pixels.to_vec();
                for y in 0..size {
                    for x in 0..size {
                        let v = amplitude * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase).cos();
                        for c in 0..3 {
                            out[(y * size + x) * 3 + c] += v;
                        }
                    }
                }
                out
            }
        };
        out.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        out
    }
}

/// Separable `[1, 2, 1] / 4` binomial filter with clamped borders.
pub fn blur(pixels: &[f64], size: usize) -> Vec<f64> {
    let at = |buf: &[f64], y: usize, x: usize, c: usize| buf[(y * size + x) * 3 + c];
    let mut tmp = vec![0.0; pixels.len()];
    for y in 0..size {
        for x in 0..size {
            let (l, r) = (x.saturating_sub(1), (x + 1).min(size - 1));
            for c in 0..3 {
                tmp[(y * size + x) * 3 + c] =
                    0.25 * at(pixels, y, l, c) + 0.5 * at(pixels, y, x, c) + 0.25 * at(pixels, y, r, c);
            }
        }
    }
    let mut out = vec![0.0; pixels.len()];
    for y in 0..size {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(size - 1));
        for x in 0..size {
            for c in 0..3 {
                out[(y * size + x) * 3 + c] = 0.25 * at(&tmp, u, x, c) + 0.5 * at(&tmp, y, x, c) + 0.25 * at(&tmp, d, x, c);
            }
        }
    }
    out
}
