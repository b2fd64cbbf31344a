use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};
use crate::numerics::standard_normal;

/// Peak amplitude of a freq_spike pattern at strength 1.
pub const SPIKE_AMPLITUDE: f64 = 0.12;
/// Standard deviation of correlated noise at strength 1.
pub const NOISE_AMPLITUDE: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    CheckerboardUpsample,
    FreqSpike,
    CorrelatedNoise,
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArtifactKind::CheckerboardUpsample => "checkerboard_upsample",
            ArtifactKind::FreqSpike => "freq_spike",
            ArtifactKind::CorrelatedNoise => "correlated_noise",
        })
    }
}

/// A generator fingerprint injected into fake images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub strength: f64,
    /// Radial frequency interval in cycles per pixel (freq_spike).
    pub band: [f64; 2],
    /// Block size in pixels (checkerboard_upsample).
    pub period: usize,
}

impl ArtifactSpec {
    pub fn freq_spike(strength: f64, band: [f64; 2]) -> Self {
        ArtifactSpec {
            kind: ArtifactKind::FreqSpike,
            strength,
            band,
            period: 2,
        }
    }

    pub fn checkerboard(strength: f64, period: usize) -> Self {
        ArtifactSpec {
            kind: ArtifactKind::CheckerboardUpsample,
            strength,
            band: [0.25, 0.5],
            period,
        }
    }

    pub fn correlated_noise(strength: f64) -> Self {
        ArtifactSpec {
            kind: ArtifactKind::CorrelatedNoise,
            strength,
            band: [0.25, 0.5],
            period: 2,
        }
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        let bad = |m: String| Err(I2pError::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.strength) {
            return bad(format!("artifact strength {} outside [0, 1]", self.strength));
        }
        let [lo, hi] = self.band;
        if !(lo >= 0.0 && lo < hi && hi <= 0.5) {
            return bad(format!("band [{lo}, {hi}] is not inside (0, 0.5]"));
        }
        if self.kind == ArtifactKind::CheckerboardUpsample
            && (self.period < 2 || !image_size.is_multiple_of(self.period))
        {
            return bad(format!(
                "checkerboard period {} must be >= 2 and divide {image_size}",
                self.period
            ));
        }
        Ok(())
    }
}

/// Adds the artifact to `base` (HWC, `size × size`) and clamps to `[0, 1]`.
/// At strength 0 the base image is returned unchanged.
pub fn inject<R: Rng>(rng: &mut R, spec: &ArtifactSpec, base: &[f64], size: usize) -> Result<Vec<f64>> {
    spec.validate(size)?;
    if spec.strength == 0.0 {
        return Ok(base.to_vec());
    }
    let s = spec.strength;
    let mut out = match spec.kind {
        ArtifactKind::CheckerboardUpsample => {
            let blocky = block_upsample(base, size, spec.period);
            base.iter()
                .zip(&blocky)
                .map(|(b, u)| (1.0 - s) * b + s * u)
                .collect()
        }
        ArtifactKind::FreqSpike => {
            let pattern = spike_pattern(rng, spec.band, size);
            let amp = SPIKE_AMPLITUDE * s;
            let mut out = base.to_vec();
            for (i, p) in pattern.iter().enumerate() {
                for ch in 0..3 {
                    out[i * 3 + ch] += amp * p;
                }
            }
            out
        }
        ArtifactKind::CorrelatedNoise => {
            let amp = NOISE_AMPLITUDE * s;
            let mut out = base.to_vec();
            for ch in 0..3 {
                let noise = correlated_noise(rng, size);
                for (i, n) in noise.iter().enumerate() {
                    out[i * 3 + ch] += amp * n;
                }
            }
            out
        }
    };
    for p in &mut out {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Averages each `period × period` block and repeats it: a low-resolution
/// render upsampled by nearest neighbour.
pub fn block_upsample(img: &[f64], size: usize, period: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    let area = (period * period) as f64;
    for by in (0..size).step_by(period) {
        for bx in (0..size).step_by(period) {
            for ch in 0..3 {
                let mut sum = 0.0;
                for y in by..by + period {
                    for x in bx..bx + period {
                        sum += img[(y * size + x) * 3 + ch];
                    }
                }
                let mean = sum / area;
                for y in by..by + period {
                    for x in bx..bx + period {
                        out[(y * size + x) * 3 + ch] = mean;
                    }
                }
            }
        }
    }
    out
}

/// Unit-amplitude plane wave whose radial frequency lies in `band`, random
/// orientation and phase.
fn spike_pattern<R: Rng>(rng: &mut R, band: [f64; 2], size: usize) -> Vec<f64> {
    let r = rng.random_range(band[0]..band[1]);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (fx, fy) = (r * theta.cos(), r * theta.sin());
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let arg = std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + phase;
            out.push(arg.cos());
        }
    }
    out
}

/// Unit-variance noise whose neighbours within two pixels are correlated:
/// each value is the scaled sum of a 2×2 window of white noise.
fn correlated_noise<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let w = size + 1;
    let white: Vec<f64> = (0..w * w).map(|_| standard_normal(rng)).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let s = white[y * w + x] + white[y * w + x + 1] + white[(y + 1) * w + x] + white[(y + 1) * w + x + 1];
            out.push(0.5 * s);
        }
    }
    out
}
