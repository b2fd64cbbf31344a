use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Mode, RunConfig};
use crate::backbone::{pretrain_with, PretrainLog, PretrainStep};
use crate::corpus::{build_manifest, flip_horizontal, CorpusManifest, ImageSample, Split};
use crate::diagnostics::{attention_profile, layer_report_from_bundles, write_attention_csv, LayerReport};
use crate::encoder::{forward_collect, prune_after, Checkpoint, LayerFeatureBundle, LinearId, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::knowledge_injector::{budget, build_mask, calibrate_default, compute_importance, ImportanceMap, UpdateMask};
use crate::layer_scout::{
    aggregate_topk, identify_critical_layer, layer_scores, normalize_bundle, weights_from_scores, CriticalLayerReport,
    IdentifyState, LayerWeights,
};
use crate::par::Exec;
use crate::trainer::{compute_metrics, evaluate, finetune, train_head, ClassifierHead, Detector, FeatureNorm, Metrics, TrainLog};

pub const REPORT_FILE: &str = "critical_layer.json";
pub const STATE_FILE: &str = "identify_state.json";
pub const MASK_FILE: &str = "mask.i2pm";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const IMPORTANCE_SUMMARY_FILE: &str = "importance_summary.csv";
pub const DETECTOR_FILE: &str = "detector.i2pc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LAYER_REPORT_FILE: &str = "layer_report.csv";
pub const ATTENTION_FILE: &str = "attention_trace.csv";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| I2pError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    fs::create_dir_all(dir).map_err(|e| I2pError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| I2pError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| I2pError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub counts: BTreeMap<String, [usize; 2]>,
    pub manifest_sha256: String,
}

/// Renders the corpus to `cfg.corpus_dir()`.
pub fn gen_corpus(cfg: &RunConfig, exec: Exec) -> Result<CorpusSummary> {
    cfg.validate()?;
    let manifest = build_manifest(&cfg.corpus, cfg.seed)?;
    let dir = cfg.corpus_dir();
    manifest.write(&dir, exec)?;
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        let mut c = [0usize; 2];
        for e in manifest.entries_in(split) {
            c[usize::from(e.label)] += 1;
        }
        counts.insert(split.name().to_string(), c);
    }
    Ok(CorpusSummary {
        counts,
        manifest_sha256: sha256_file(&dir.join("manifest.json"))?,
    })
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<ImageSample>> {
    let dir = cfg.corpus_dir();
    let manifest = CorpusManifest::load(&dir)?;
    if manifest.params.image_size != cfg.encoder.image_size {
        return Err(I2pError::InvalidArgument(format!(
            "corpus images are {}px, encoder expects {}px",
            manifest.params.image_size, cfg.encoder.image_size
        )));
    }
    manifest.load_split(&dir, split)
}

/// Pretrains the backbone and writes it to `cfg.backbone_path()`.
pub fn pretrain_backbone(cfg: &RunConfig, on_step: impl FnMut(&PretrainStep)) -> Result<(ToyEncoder, PretrainLog)> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let (enc, log) = pretrain_with(cfg.encoder, &cfg.pretrain, on_step)?;
    let path = cfg.backbone_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| I2pError::io(parent, e))?;
    }
    Checkpoint::from_encoder(&enc, Vec::new())?.save(&path)?;
    log.write_csv(&cfg.artifact(PRETRAIN_LOG_FILE))?;
    Ok((enc, log))
}

pub fn load_backbone(cfg: &RunConfig) -> Result<ToyEncoder> {
    let enc = Checkpoint::load(&cfg.backbone_path())?.to_encoder()?;
    if *enc.config() != cfg.encoder {
        let mut want = cfg.encoder;
        want.seed = enc.config().seed;
        if *enc.config() != want {
            return Err(I2pError::InvalidArgument(
                "backbone checkpoint does not match the encoder configuration".into(),
            ));
        }
    }
    Ok(enc)
}

fn features_of(enc: &ToyEncoder, set: &[ImageSample], flip: bool, exec: Exec) -> Result<LayerFeatureBundle> {
    let size = enc.config().image_size;
    let owned: Vec<Vec<f64>> = if flip {
        set.iter().map(|s| flip_horizontal(&s.pixels, size)).collect()
    } else {
        Vec::new()
    };
    let images: Vec<&[f64]> = if flip {
        owned.iter().map(Vec::as_slice).collect()
    } else {
        set.iter().map(|s| s.pixels.as_slice()).collect()
    };
    let ids: Vec<String> = set.iter().map(|s| s.id.clone()).collect();
    forward_collect(enc, &images, &ids, exec)
}

fn labels_of(set: &[ImageSample]) -> Vec<u8> {
    set.iter().map(|s| s.label).collect()
}

/// Identification on the training split. Writes the report and the learned
/// scorer state.
pub fn identify(cfg: &RunConfig, exec: Exec) -> Result<CriticalLayerReport> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let enc = load_backbone(cfg)?;
    let train = load_split(cfg, Split::Train)?;
    let (id, _) = identify_critical_layer(&enc, &train, &cfg.identify, exec)?;
    write_json(&cfg.artifact(REPORT_FILE), &id.report)?;
    write_json(&cfg.artifact(STATE_FILE), &id.state)?;
    Ok(id.report)
}

pub fn read_report(cfg: &RunConfig) -> Result<CriticalLayerReport> {
    let report: CriticalLayerReport = read_json(&cfg.artifact(REPORT_FILE))?;
    if report.critical_index == 0 || report.critical_index > cfg.encoder.depth {
        return Err(I2pError::InvalidArgument(format!(
            "critical layer {} outside 1..={}",
            report.critical_index, cfg.encoder.depth
        )));
    }
    Ok(report)
}

/// The encoder a mode fine-tunes: pruned after the critical layer or whole.
pub fn mode_encoder(cfg: &RunConfig, mode: Mode) -> Result<ToyEncoder> {
    let enc = load_backbone(cfg)?;
    if mode.prunes() {
        prune_after(&enc, read_report(cfg)?.critical_index)
    } else {
        Ok(enc)
    }
}

#[derive(Debug, Clone)]
pub struct ImportanceOutcome {
    pub map: ImportanceMap,
    pub damping: BTreeMap<LinearId, f64>,
    pub mask: UpdateMask,
}

/// Importance of every eligible weight of `enc` from one calibration pass.
pub fn importance_for(
    enc: &ToyEncoder,
    train: &[ImageSample],
    damping: f64,
    exec: Exec,
) -> Result<(ImportanceMap, BTreeMap<LinearId, f64>)> {
    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let moments = calibrate_default(enc, &images, &LinearId::all(enc.depth()), damping)?;
    compute_importance(enc, &moments, exec)
}

/// Importance and mask for the configured mode's encoder.
pub fn importance(cfg: &RunConfig, exec: Exec) -> Result<ImportanceOutcome> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let enc = mode_encoder(cfg, cfg.mode)?;
    let train = load_split(cfg, Split::Train)?;
    let (map, damping) = importance_for(&enc, &train, cfg.damping, exec)?;
    let mask = build_mask(&map, cfg.eta, cfg.mask_scope)?;
    let path = cfg.artifact(MASK_FILE);
    mask.save(&path)?;
    let reloaded = UpdateMask::load(&path)?;
    if reloaded.ones() != mask.ones() {
        return Err(I2pError::Format {
            kind: "mask",
            detail: "reloaded mask differs from the one written".into(),
        });
    }
    map.write_extremes_csv(&cfg.artifact(IMPORTANCE_FILE), cfg.importance_extremes)?;
    let mut w = csv::Writer::from_path(cfg.artifact(IMPORTANCE_SUMMARY_FILE))?;
    for s in map.summaries(Some(&mask)) {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| I2pError::io(cfg.artifact(IMPORTANCE_SUMMARY_FILE), e))?;
    Ok(ImportanceOutcome { map, damping, mask })
}

fn full_mask(enc: &ToyEncoder) -> Result<UpdateMask> {
    let shapes = LinearId::all(enc.depth())
        .into_iter()
        .map(|id| {
            let lin = enc.linear(id)?;
            Ok((id, (lin.out_dim(), lin.in_dim())))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(UpdateMask::uniform(&shapes, true, 1.0))
}

/// Standardizer fitted on the readout features of the training images.
pub fn fit_norm(enc: &ToyEncoder, train: &[ImageSample], exec: Exec) -> Result<FeatureNorm> {
    let det = Detector::new(enc.clone(), FeatureNorm::identity(enc.width()))?;
    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    FeatureNorm::fit(&det.features(&images, exec)?, enc.width())
}

/// Fine-tunes a detector for `mode` on `train`, given that mode's encoder
/// and, for masked modes, its mask.
pub fn train_detector(
    enc: ToyEncoder,
    mode: Mode,
    mask: Option<&UpdateMask>,
    train: &[ImageSample],
    cfg: &RunConfig,
    exec: Exec,
) -> Result<(Detector, TrainLog)> {
    let norm = fit_norm(&enc, train, exec)?;
    let full;
    let mask = match mode {
        Mode::I2p | Mode::CkiOnly => {
            let m = mask.ok_or_else(|| I2pError::InvalidArgument(format!("mode {mode} needs a mask")))?;
            let want = budget(m.eta, enc.eligible_count());
            if m.total() != enc.eligible_count() || m.ones() != want {
                return Err(I2pError::InvalidArgument(format!(
                    "mask has {} of {} entries set; the encoder needs {want} of {}",
                    m.ones(),
                    m.total(),
                    enc.eligible_count()
                )));
            }
            Some(m)
        }
        Mode::FullFt => {
            full = full_mask(&enc)?;
            Some(&full)
        }
        Mode::CliOnly | Mode::FrozenLast => None,
    };
    let mut det = Detector::new(enc, norm)?;
    let log = finetune(&mut det, mask, train, &cfg.train)?;
    Ok((det, log))
}

/// Fine-tunes in the configured mode and writes the detector and its log.
pub fn finetune_stage(cfg: &RunConfig, exec: Exec) -> Result<(Detector, TrainLog)> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let enc = mode_encoder(cfg, cfg.mode)?;
    let mask = if cfg.mode.uses_mask() {
        Some(UpdateMask::load(&cfg.artifact(MASK_FILE))?)
    } else {
        None
    };
    let train = load_split(cfg, Split::Train)?;
    let (det, log) = train_detector(enc, cfg.mode, mask.as_ref(), &train, cfg, exec)?;
    det.to_checkpoint()?.save(&cfg.artifact(DETECTOR_FILE))?;
    log.write_csv(&cfg.artifact(TRAIN_LOG_FILE))?;
    Ok((det, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub test_in: Metrics,
    pub test_shift: Metrics,
}

pub fn evaluate_detector(det: &Detector, mode: Mode, test_in: &[ImageSample], test_shift: &[ImageSample], exec: Exec) -> Result<EvalReport> {
    Ok(EvalReport {
        mode,
        test_in: evaluate(det, test_in, exec)?,
        test_shift: evaluate(det, test_shift, exec)?,
    })
}

/// Evaluates `<out>/detector.i2pc` on both test splits.
pub fn eval_stage(cfg: &RunConfig, exec: Exec) -> Result<EvalReport> {
    cfg.validate()?;
    let det = Detector::from_checkpoint(&Checkpoint::load(&cfg.artifact(DETECTOR_FILE))?)?;
    let report = evaluate_detector(
        &det,
        cfg.mode,
        &load_split(cfg, Split::TestIn)?,
        &load_split(cfg, Split::TestShift)?,
        exec,
    )?;
    write_json(&cfg.artifact(METRICS_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Eta,
    K,
}

impl SweepParam {
    pub fn file_name(self) -> &'static str {
        match self {
            SweepParam::Eta => "sweep_eta.csv",
            SweepParam::K => "sweep_k.csv",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = I2pError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(SweepParam::Eta),
            "k" => Ok(SweepParam::K),
            _ => Err(I2pError::InvalidArgument(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub acc_in: f64,
    pub ap_in: f64,
    pub acc_shift: f64,
    pub ap_shift: f64,
}

fn sweep_row(value: f64, r: &EvalReport) -> SweepRow {
    SweepRow {
        value,
        acc_in: r.test_in.acc,
        ap_in: r.test_in.ap,
        acc_shift: r.test_shift.acc,
        ap_shift: r.test_shift.ap,
    }
}

/// Metric per parameter value, in ascending parameter order.
pub fn sweep(cfg: &RunConfig, param: SweepParam, exec: Exec) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let train = load_split(cfg, Split::Train)?;
    let test_in = load_split(cfg, Split::TestIn)?;
    let test_shift = load_split(cfg, Split::TestShift)?;
    let mut rows = match param {
        SweepParam::Eta => {
            if !cfg.mode.uses_mask() {
                return Err(I2pError::InvalidArgument(format!("mode {} has no mask to sweep", cfg.mode)));
            }
            let enc = mode_encoder(cfg, cfg.mode)?;
            let (map, _) = importance_for(&enc, &train, cfg.damping, exec)?;
            let mut rows = Vec::new();
            for &eta in &cfg.eta_values {
                let mask = build_mask(&map, eta, cfg.mask_scope)?;
                let (det, _) = train_detector(enc.clone(), cfg.mode, Some(&mask), &train, cfg, exec)?;
                rows.push(sweep_row(eta, &evaluate_detector(&det, cfg.mode, &test_in, &test_shift, exec)?));
            }
            rows
        }
        SweepParam::K => sweep_k(cfg, &train, &test_in, &test_shift, exec)?,
    };
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut w = csv::Writer::from_path(cfg.artifact(param.file_name()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| I2pError::io(cfg.artifact(param.file_name()), e))?;
    Ok(rows)
}

/// Per-sample distributions of `bundle` under the learned scorer, with the
/// layer ranking taken from the training distribution `pi`.
fn weights_for(state: &IdentifyState, bundle: &LayerFeatureBundle, train: &LayerWeights) -> Result<LayerWeights> {
    let scores = layer_scores(&state.net, &normalize_bundle(bundle, &state.norms)?)?;
    let own = weights_from_scores(&scores, crate::layer_scout::Aggregation::Mean)?;
    Ok(LayerWeights {
        pi: train.pi.clone(),
        per_sample_pi: own.per_sample_pi,
        critical_index: train.critical_index,
    })
}

fn topk_features(bundle: &LayerFeatureBundle, weights: &LayerWeights, k: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(bundle.samples() * bundle.width());
    for i in 0..bundle.samples() {
        out.extend(aggregate_topk(bundle, weights, i, k)?);
    }
    Ok(out)
}

/// Head trained on top-k aggregated features of the frozen backbone.
fn sweep_k(
    cfg: &RunConfig,
    train: &[ImageSample],
    test_in: &[ImageSample],
    test_shift: &[ImageSample],
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    let enc = load_backbone(cfg)?;
    let report = read_report(cfg)?;
    let state: IdentifyState = read_json(&cfg.artifact(STATE_FILE))?;
    let plain = features_of(&enc, train, false, exec)?;
    let flipped = features_of(&enc, train, true, exec)?;
    let base = LayerWeights {
        pi: report.pi.clone(),
        per_sample_pi: None,
        critical_index: report.critical_index,
    };
    let w_plain = weights_for(&state, &plain, &base)?;
    let w_flip = weights_for(&state, &flipped, &base)?;
    let tests = [test_in, test_shift].map(|set| -> Result<_> {
        let b = features_of(&enc, set, false, exec)?;
        let w = weights_for(&state, &b, &base)?;
        Ok((b, w, labels_of(set)))
    });
    let [t_in, t_shift] = tests;
    let (t_in, t_shift) = (t_in?, t_shift?);
    let labels = labels_of(train);
    let d = enc.width();
    let mut rows = Vec::new();
    for &k in &cfg.k_values {
        let k = if k == 0 { enc.depth() } else { k };
        let f0 = topk_features(&plain, &w_plain, k)?;
        let f1 = topk_features(&flipped, &w_flip, k)?;
        let norm = FeatureNorm::fit(&f0, d)?;
        let mut head = ClassifierHead::zeros(d);
        train_head(&mut head, &norm, &f0, cfg.train.augment_flip.then_some(f1.as_slice()), &labels, &cfg.train)?;
        let score = |(b, w, y): &(LayerFeatureBundle, LayerWeights, Vec<u8>)| -> Result<Metrics> {
            let f = topk_features(b, w, k)?;
            let s = f
                .chunks_exact(d)
                .map(|x| head.logit(&norm.apply(x)).map(crate::numerics::sigmoid))
                .collect::<Result<Vec<_>>>()?;
            compute_metrics(&s, y)
        };
        let report = EvalReport {
            mode: cfg.mode,
            test_in: score(&t_in)?,
            test_shift: score(&t_shift)?,
        };
        rows.push(sweep_row(k as f64, &report));
    }
    Ok(rows)
}

/// Layer report on the full backbone plus the averaged attention profile.
pub fn diagnose(cfg: &RunConfig, exec: Exec) -> Result<LayerReport> {
    cfg.validate()?;
    ensure_out(cfg)?;
    let enc = load_backbone(cfg)?;
    let report = read_report(cfg)?;
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::TestIn)?;
    let weights = LayerWeights {
        pi: report.pi.clone(),
        per_sample_pi: None,
        critical_index: report.critical_index,
    };
    let layer_report = layer_report_from_bundles(
        &features_of(&enc, &train, false, exec)?,
        &labels_of(&train),
        &features_of(&enc, &test, false, exec)?,
        &labels_of(&test),
        &weights,
        &cfg.probe,
        exec,
    )?;
    layer_report.write_csv(&cfg.artifact(LAYER_REPORT_FILE))?;
    let images: Vec<&[f64]> = train
        .iter()
        .take(cfg.attention_images.max(1))
        .map(|s| s.pixels.as_slice())
        .collect();
    write_attention_csv(&attention_profile(&enc, &images)?, &cfg.artifact(ATTENTION_FILE))?;
    Ok(layer_report)
}

/// Files whose hashes identify the outcome of a pipeline run.
pub fn artifact_hashes(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for name in [REPORT_FILE, MASK_FILE, DETECTOR_FILE, TRAIN_LOG_FILE, METRICS_FILE] {
        let path: PathBuf = cfg.artifact(name);
        if path.exists() {
            out.insert(name.to_string(), sha256_file(&path)?);
        }
    }
    Ok(out)
}
