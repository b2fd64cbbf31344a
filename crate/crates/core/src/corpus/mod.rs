//! Procedural "real" and "fake" images with generator-like artifacts, PPM
//! I/O and split manifests.

mod artifact;
mod ppm;
mod render;
mod spectrum;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use artifact::{block_upsample, inject, ArtifactKind, ArtifactSpec, NOISE_AMPLITUDE, SPIKE_AMPLITUDE};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use render::{render_scene, Scene, ShapeKind};
pub use spectrum::{band_energies, band_energy};

use crate::error::{I2pError, Result};
use crate::numerics::rng_for;
use crate::par::Exec;

pub const STREAM_REAL: u64 = 0x5245_414C;
pub const STREAM_FAKE: u64 = 0x4641_4B45;
pub const STREAM_SHIFT_REAL: u64 = 0x5348_5245;
pub const STREAM_SHIFT_FAKE: u64 = 0x5348_464B;
const STREAM_SPLIT: u64 = 0x5350_4C54;
const ARTIFACT_OFFSET: u64 = 0xA4_7100;

pub const REAL: u8 = 0;
pub const FAKE: u8 = 1;

/// Where an image came from: the camera-like pipeline or an artifact.
/// Serialized as the string `"real"` or as the artifact spec object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Real,
    Artifact(ArtifactSpec),
}

#[derive(Serialize, Deserialize)]
enum RealTag {
    #[serde(rename = "real")]
    Real,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProvenanceRepr {
    Real(RealTag),
    Artifact(ArtifactSpec),
}

impl Serialize for Provenance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Provenance::Real => RealTag::Real.serialize(s),
            Provenance::Artifact(spec) => spec.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match ProvenanceRepr::deserialize(d)? {
            ProvenanceRepr::Real(_) => Provenance::Real,
            ProvenanceRepr::Artifact(spec) => Provenance::Artifact(spec),
        })
    }
}

impl Provenance {
    pub fn label(&self) -> u8 {
        match self {
            Provenance::Real => REAL,
            Provenance::Artifact(_) => FAKE,
        }
    }
}

/// One labeled image, HWC pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub label: u8,
    pub pixels: Vec<f64>,
    pub provenance: Provenance,
}

pub fn real_sample(seed: u64, stream: u64, index: u64, size: usize) -> ImageSample {
    let mut rng = rng_for(seed, stream, index);
    ImageSample {
        id: format!("real-{index:05}"),
        label: REAL,
        pixels: render_scene(&mut rng, size).pixels,
        provenance: Provenance::Real,
    }
}

pub fn fake_sample(seed: u64, stream: u64, index: u64, spec: &ArtifactSpec, size: usize) -> Result<ImageSample> {
    let mut base_rng = rng_for(seed, stream, index);
    let base = render_scene(&mut base_rng, size).pixels;
    let mut art_rng = rng_for(seed, stream + ARTIFACT_OFFSET, index);
    Ok(ImageSample {
        id: format!("fake-{index:05}"),
        label: FAKE,
        pixels: inject(&mut art_rng, spec, &base, size)?,
        provenance: Provenance::Artifact(*spec),
    })
}

pub fn synth_real(n: usize, seed: u64, image_size: usize) -> Vec<ImageSample> {
    (0..n as u64)
        .map(|i| real_sample(seed, STREAM_REAL, i, image_size))
        .collect()
}

pub fn synth_fake(n: usize, seed: u64, spec: &ArtifactSpec, image_size: usize) -> Result<Vec<ImageSample>> {
    spec.validate(image_size)?;
    (0..n as u64)
        .map(|i| fake_sample(seed, STREAM_FAKE, i, spec, image_size))
        .collect()
}

/// Mirrors an HWC image left to right.
pub fn flip_horizontal(pixels: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for y in 0..size {
        for x in 0..size {
            let src = (y * size + x) * 3;
            let dst = (y * size + size - 1 - x) * 3;
            out[dst..dst + 3].copy_from_slice(&pixels[src..src + 3]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub image_size: usize,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_shift: usize,
    pub train_spec: ArtifactSpec,
    pub shift_spec: ArtifactSpec,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            image_size: 32,
            n_train: 1600,
            n_test_in: 400,
            n_test_shift: 400,
            train_spec: ArtifactSpec::freq_spike(0.5, [0.2, 0.35]),
            shift_spec: ArtifactSpec::correlated_noise(0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestIn,
    TestShift,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestIn, Split::TestShift];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestIn => "test_in",
            Split::TestShift => "test_shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: u8,
    pub provenance: Provenance,
    pub split: Option<Split>,
    /// Generator stream and index the pixels are derived from.
    pub stream: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub params: CorpusParams,
    pub entries: Vec<ManifestEntry>,
}

fn entry(prefix: &str, label: u8, provenance: Provenance, stream: u64, index: u64) -> ManifestEntry {
    let class = if label == FAKE { "fake" } else { "real" };
    ManifestEntry {
        id: format!("{prefix}{class}-{index:05}"),
        path: String::new(),
        label,
        provenance,
        split: None,
        stream,
        index,
    }
}

/// Unsplit pool of `n_train + n_test_in` images, half real (rounded up) and
/// half carrying `train_spec`.
pub fn pool_manifest(params: &CorpusParams, seed: u64) -> Result<CorpusManifest> {
    params.train_spec.validate(params.image_size)?;
    let total = params.n_train + params.n_test_in;
    let fakes = total / 2;
    let mut entries = Vec::with_capacity(total);
    for i in 0..(total - fakes) as u64 {
        entries.push(entry("", REAL, Provenance::Real, STREAM_REAL, i));
    }
    for i in 0..fakes as u64 {
        entries.push(entry("", FAKE, Provenance::Artifact(params.train_spec), STREAM_FAKE, i));
    }
    Ok(CorpusManifest {
        seed,
        params: *params,
        entries,
    })
}

/// Assigns pool entries to train/test_in by `ratios` (stratified per class,
/// seeded shuffle) and appends a test_shift split regenerated with a
/// different artifact.
pub fn split_manifest(
    manifest: &CorpusManifest,
    ratios: &[f64],
    seed: u64,
    shift_spec: &ArtifactSpec,
) -> Result<CorpusManifest> {
    if ratios.len() != 2 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(I2pError::InvalidArgument(
            "split ratios must be two fractions (train, test_in)".into(),
        ));
    }
    if (ratios[0] + ratios[1] - 1.0).abs() > 1e-9 {
        return Err(I2pError::InvalidArgument(format!(
            "split ratios sum to {}, not 1",
            ratios[0] + ratios[1]
        )));
    }
    let size = manifest.params.image_size;
    shift_spec.validate(size)?;
    if *shift_spec == manifest.params.train_spec {
        return Err(I2pError::InvalidArgument(
            "shift artifact must differ from the training artifact".into(),
        ));
    }
    let mut out = manifest.clone();
    let mut rng = rng_for(seed, STREAM_SPLIT, 0);
    for label in [REAL, FAKE] {
        let mut idx: Vec<usize> = (0..out.entries.len())
            .filter(|&i| out.entries[i].label == label && out.entries[i].split != Some(Split::TestShift))
            .collect();
        idx.shuffle(&mut rng);
        let n_train = (ratios[0] * idx.len() as f64).round() as usize;
        for (rank, &i) in idx.iter().enumerate() {
            out.entries[i].split = Some(if rank < n_train { Split::Train } else { Split::TestIn });
        }
    }
    out.entries.retain(|e| e.split != Some(Split::TestShift));
    let n_shift = out.params.n_test_shift;
    let fakes = n_shift / 2;
    for i in 0..(n_shift - fakes) as u64 {
        let mut e = entry("shift-", REAL, Provenance::Real, STREAM_SHIFT_REAL, i);
        e.split = Some(Split::TestShift);
        out.entries.push(e);
    }
    for i in 0..fakes as u64 {
        let mut e = entry("shift-", FAKE, Provenance::Artifact(*shift_spec), STREAM_SHIFT_FAKE, i);
        e.split = Some(Split::TestShift);
        out.entries.push(e);
    }
    out.params.shift_spec = *shift_spec;
    for e in &mut out.entries {
        let class = if e.label == FAKE { "fake" } else { "real" };
        e.path = match e.split {
            Some(s) => format!("{}/{class}/{}.ppm", s.name(), e.id),
            None => String::new(),
        };
    }
    Ok(out)
}

/// Full default-layout manifest for `params`.
pub fn build_manifest(params: &CorpusParams, seed: u64) -> Result<CorpusManifest> {
    let pool = pool_manifest(params, seed)?;
    let total = (params.n_train + params.n_test_in) as f64;
    let r = params.n_train as f64 / total;
    split_manifest(&pool, &[r, 1.0 - r], seed, &params.shift_spec)
}

impl CorpusManifest {
    /// Regenerates the pixels of one entry.
    pub fn render(&self, e: &ManifestEntry) -> Result<ImageSample> {
        let size = self.params.image_size;
        let mut s = match e.provenance {
            Provenance::Real => real_sample(self.seed, e.stream, e.index, size),
            Provenance::Artifact(spec) => fake_sample(self.seed, e.stream, e.index, &spec, size)?,
        };
        s.id = e.id.clone();
        Ok(s)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// Renders a split in memory, in manifest order.
    pub fn render_split(&self, split: Split, exec: Exec) -> Result<Vec<ImageSample>> {
        let entries: Vec<&ManifestEntry> = self.entries_in(split).collect();
        exec.map(&entries, |e| self.render(e)).into_iter().collect()
    }

    /// Writes every split image as PPM under `dir` plus `manifest.json`.
    pub fn write(&self, dir: &Path, exec: Exec) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| I2pError::io(dir, e))?;
        let entries: Vec<&ManifestEntry> = self.entries.iter().filter(|e| e.split.is_some()).collect();
        let rendered: Vec<Result<ImageSample>> = exec.map(&entries, |e| self.render(e));
        for (e, s) in entries.iter().zip(rendered) {
            save_ppm(&s?.pixels, self.params.image_size, &dir.join(&e.path))?;
        }
        let json = serde_json::to_vec_pretty(self)?;
        let path = dir.join("manifest.json");
        fs::write(&path, json).map_err(|e| I2pError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| I2pError::io(&path, e))?;
        let m: CorpusManifest = serde_json::from_slice(&bytes)?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &m.entries {
            if !seen.insert(&e.id) {
                return Err(I2pError::Format {
                    kind: "manifest",
                    detail: format!("duplicate id {}", e.id),
                });
            }
            if e.label != e.provenance.label() {
                return Err(I2pError::Format {
                    kind: "manifest",
                    detail: format!("label of {} disagrees with its provenance", e.id),
                });
            }
        }
        Ok(m)
    }

    /// Loads a split from the PPM files under `dir`.
    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<ImageSample>> {
        self.entries_in(split)
            .map(|e| {
                Ok(ImageSample {
                    id: e.id.clone(),
                    label: e.label,
                    pixels: load_ppm(&dir.join(&e.path), self.params.image_size)?,
                    provenance: e.provenance,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_json_shape() {
        assert_eq!(serde_json::to_string(&Provenance::Real).unwrap(), "\"real\"");
        let p = Provenance::Artifact(ArtifactSpec::correlated_noise(0.3));
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("correlated_noise"));
        assert_eq!(serde_json::from_str::<Provenance>(&s).unwrap(), p);
        assert_eq!(serde_json::from_str::<Provenance>("\"real\"").unwrap(), Provenance::Real);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = &synth_real(1, 3, 8)[0];
        let f = flip_horizontal(&s.pixels, 8);
        assert_ne!(f, s.pixels);
        assert_eq!(flip_horizontal(&f, 8), s.pixels);
    }
}
