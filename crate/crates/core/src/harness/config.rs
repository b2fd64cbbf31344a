use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::PretrainConfig;
use crate::corpus::CorpusParams;
use crate::diagnostics::ProbeConfig;
use crate::encoder::EncoderConfig;
use crate::error::{I2pError, Result};
use crate::knowledge_injector::{MaskScope, DEFAULT_DAMPING};
use crate::layer_scout::IdentifyConfig;
use crate::trainer::TrainConfig;

/// Which parts of the method a fine-tuning run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Prune after the critical layer and update the masked weights.
    #[default]
    I2p,
    /// Prune after the critical layer; train the head only.
    CliOnly,
    /// Keep every block and update the masked weights.
    CkiOnly,
    /// Keep every block; train the head only.
    FrozenLast,
    /// Keep every block and update every eligible weight.
    FullFt,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::I2p, Mode::CliOnly, Mode::CkiOnly, Mode::FrozenLast, Mode::FullFt];

    pub fn name(self) -> &'static str {
        match self {
            Mode::I2p => "i2p",
            Mode::CliOnly => "cli-only",
            Mode::CkiOnly => "cki-only",
            Mode::FrozenLast => "frozen-last",
            Mode::FullFt => "full-ft",
        }
    }

    pub fn prunes(self) -> bool {
        matches!(self, Mode::I2p | Mode::CliOnly)
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Mode::I2p | Mode::CkiOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = I2pError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| I2pError::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory receiving every artifact of a run.
    pub out: PathBuf,
    /// Corpus directory; defaults to `<out>/corpus`.
    pub corpus: Option<PathBuf>,
    /// Pretrained encoder checkpoint; defaults to `<out>/backbone.i2pc`.
    pub backbone: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("i2p-run"),
            corpus: None,
            backbone: None,
        }
    }
}

/// Everything a command needs. Missing fields take their defaults; the
/// resolved configuration is written to `<out>/config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the corpus, identification, probes and fine-tuning. The
    /// backbone has its own seeds under `encoder` and `pretrain`.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub corpus: CorpusParams,
    pub identify: IdentifyConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Fraction of eligible weights unfrozen by the mask.
    pub eta: f64,
    pub damping: f64,
    pub mask_scope: MaskScope,
    pub mode: Mode,
    /// Values visited by `sweep --param eta`.
    pub eta_values: Vec<f64>,
    /// Values visited by `sweep --param k`; 0 stands for the full depth.
    pub k_values: Vec<usize>,
    /// Training images averaged into `attention_trace.csv`.
    pub attention_images: usize,
    /// Lowest and highest scores kept per layer in `importance.csv`.
    pub importance_extremes: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            corpus: CorpusParams::default(),
            identify: IdentifyConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            eta: 5e-4,
            damping: DEFAULT_DAMPING,
            mask_scope: MaskScope::Global,
            mode: Mode::I2p,
            eta_values: vec![1e-5, 1e-4, 5e-4, 5e-3, 5e-2],
            k_values: vec![1, 2, 3, 4, 0],
            attention_images: 32,
            importance_extremes: 64,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| I2pError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)?;
        Ok(cfg.resolved())
    }

    /// Copies the run seed into every seeded stage.
    pub fn resolved(mut self) -> Self {
        self.identify.seed = self.seed;
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolved()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pretrain.validate(self.encoder.depth)?;
        self.train.validate()?;
        let bad = |m: String| Err(I2pError::InvalidArgument(m));
        if self.corpus.image_size != self.encoder.image_size {
            return bad(format!(
                "corpus image_size {} differs from encoder image_size {}",
                self.corpus.image_size, self.encoder.image_size
            ));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta {} outside (0, 1]", self.eta));
        }
        if self.eta_values.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return bad("eta_values must lie in (0, 1]".into());
        }
        if self.k_values.iter().any(|&k| k > self.encoder.depth) {
            return bad(format!("k_values must not exceed depth {}", self.encoder.depth));
        }
        if !(self.damping > 0.0) {
            return bad(format!("damping {} must be positive", self.damping));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.corpus.clone().unwrap_or_else(|| self.paths.out.join("corpus"))
    }

    pub fn backbone_path(&self) -> PathBuf {
        self.paths.backbone.clone().unwrap_or_else(|| self.paths.out.join("backbone.i2pc"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.out.join(name)
    }

    /// Writes the resolved configuration to `<out>/config.json`.
    pub fn echo(&self) -> Result<PathBuf> {
        let dir = self.out_dir();
        fs::create_dir_all(dir).map_err(|e| I2pError::io(dir, e))?;
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| I2pError::io(&path, e))?;
        Ok(path)
    }
}
