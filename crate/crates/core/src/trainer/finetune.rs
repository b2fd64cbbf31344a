use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detector::head_backward;
use super::{compute_metrics, AdamState, ClassifierHead, Detector, FeatureNorm, Metrics, TrainConfig};
use crate::corpus::{flip_horizontal, ImageSample};
use crate::encoder::{GradEntries, GradSelection, LinearId, ParamId};
use crate::error::{I2pError, Result};
use crate::knowledge_injector::{masked_step_indices, StepHyper, StepRule, UpdateMask};
use crate::numerics::rng_for;
use crate::par::Exec;

const STREAM_SHUFFLE: u64 = 0x5348_5546;
const STREAM_FLIP: u64 = 0x464C_4950;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| I2pError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { epochs })
    }
}

/// Per-layer trainable indices; `None` means the whole layer is trainable.
fn trainable_entries(det: &Detector, mask: Option<&UpdateMask>) -> Result<BTreeMap<LinearId, Vec<usize>>> {
    let mut out = BTreeMap::new();
    let Some(mask) = mask else {
        return Ok(out);
    };
    for (&id, m) in &mask.layers {
        let lin = det
            .encoder
            .linear(id)
            .map_err(|_| I2pError::InvalidArgument(format!("mask layer {id} is not in the encoder")))?;
        if (m.rows, m.cols) != (lin.out_dim(), lin.in_dim()) {
            return Err(I2pError::Shape(format!(
                "mask for {id} is {}x{}, weight is {}x{}",
                m.rows,
                m.cols,
                lin.out_dim(),
                lin.in_dim()
            )));
        }
        let idx = m.indices();
        if !idx.is_empty() {
            out.insert(id, idx);
        }
    }
    Ok(out)
}

/// Masked Adam fine-tuning of the encoder weights selected by `mask`, with
/// the head always trainable. Without a mask, or with an all-zero mask,
/// only the head is trained.
pub fn finetune(
    det: &mut Detector,
    mask: Option<&UpdateMask>,
    train: &[ImageSample],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(I2pError::Empty("training set".into()));
    }
    let size = det.encoder.config().image_size;
    let entries = trainable_entries(det, mask)?;
    let mut sel = GradSelection::new();
    for (&id, idx) in &entries {
        let full = det.encoder.linear(id)?.weight.numel() == idx.len();
        sel.insert(
            ParamId::weight(id),
            if full { GradEntries::All } else { GradEntries::Only(idx.clone()) },
        );
    }
    let mut states: BTreeMap<LinearId, AdamState> = entries
        .keys()
        .map(|&id| Ok((id, AdamState::new(det.encoder.linear(id)?.weight.numel()))))
        .collect::<Result<_>>()?;
    let d = det.encoder.width();
    let mut head_w = AdamState::new(d);
    let mut head_b = AdamState::new(1);
    let adam = cfg.adam();

    // With a frozen encoder, features of both orientations are computed once.
    if sel.is_empty() {
        let plain: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
        let f0 = det.features(&plain, Exec::Parallel)?;
        let f1 = if cfg.augment_flip {
            let flipped: Vec<Vec<f64>> = train.iter().map(|s| flip_horizontal(&s.pixels, size)).collect();
            let refs: Vec<&[f64]> = flipped.iter().map(Vec::as_slice).collect();
            Some(det.features(&refs, Exec::Parallel)?)
        } else {
            None
        };
        let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
        return train_head(&mut det.head, &det.norm, &f0, f1.as_deref(), &labels, cfg);
    }

    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let hyper = StepHyper {
            lr,
            rule: StepRule::Adam(adam),
        };
        let (order, flips) = epoch_plan(train.len(), epoch, cfg);
        let mut total = 0.0;
        for (batch, flags) in order.chunks(cfg.batch_size).zip(flips.chunks(cfg.batch_size)) {
            let labels: Vec<u8> = batch.iter().map(|&i| train[i].label).collect();
            let owned: Vec<Vec<f64>> = batch
                .iter()
                .zip(flags)
                .map(|(&i, &fl)| {
                    if fl {
                        flip_horizontal(&train[i].pixels, size)
                    } else {
                        train[i].pixels.clone()
                    }
                })
                .collect();
            let refs: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
            let (loss, grads, hg) = det.loss_and_grads(&refs, &labels, &sel)?;
            total += loss * batch.len() as f64;
            head_w.update(&mut det.head.weight, &hg.weight, &adam, lr);
            let mut b = [det.head.bias];
            head_b.update(&mut b, &[hg.bias], &adam, lr);
            det.head.bias = b[0];
            for (id, idx) in &entries {
                let g = grads
                    .get(&ParamId::weight(*id))
                    .ok_or_else(|| I2pError::InvalidArgument(format!("no gradient for {id}")))?;
                let w = det.encoder.param_mut(ParamId::weight(*id))?;
                let st = states.get_mut(id).expect("state per trainable layer");
                masked_step_indices(w, g, idx, st, &hyper)?;
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: total / train.len() as f64,
            lr,
        });
    }
    det.encoder.ensure_finite()?;
    Ok(log)
}

/// Shuffled order and per-position flip flags of one epoch.
fn epoch_plan(n: usize, epoch: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<bool>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(cfg.seed, STREAM_SHUFFLE, epoch as u64));
    let mut flip_rng = rng_for(cfg.seed, STREAM_FLIP, epoch as u64);
    let flips = order
        .iter()
        .map(|_| cfg.augment_flip && flip_rng.random_bool(0.5))
        .collect();
    (order, flips)
}

/// Trains `head` on fixed features with the same schedule, data order and
/// flip draws as [`finetune`]. `flipped` holds the features of the mirrored
/// images and is required when `cfg.augment_flip` is set.
pub fn train_head(
    head: &mut ClassifierHead,
    norm: &FeatureNorm,
    plain: &[f64],
    flipped: Option<&[f64]>,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let d = head.weight.len();
    let n = labels.len();
    if n == 0 {
        return Err(I2pError::Empty("training set".into()));
    }
    if plain.len() != n * d || flipped.is_some_and(|f| f.len() != n * d) {
        return Err(I2pError::Shape(format!("features do not match {n} samples of width {d}")));
    }
    if cfg.augment_flip && flipped.is_none() {
        return Err(I2pError::InvalidArgument("flip augmentation needs mirrored features".into()));
    }
    let adam = cfg.adam();
    let mut head_w = AdamState::new(d);
    let mut head_b = AdamState::new(1);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (order, flips) = epoch_plan(n, epoch, cfg);
        let mut total = 0.0;
        for (batch, flags) in order.chunks(cfg.batch_size).zip(flips.chunks(cfg.batch_size)) {
            let batch_labels: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let mut feats = Vec::with_capacity(batch.len() * d);
            for (&i, &fl) in batch.iter().zip(flags) {
                let src = match (fl, flipped) {
                    (true, Some(f)) => f,
                    _ => plain,
                };
                feats.extend_from_slice(&src[i * d..(i + 1) * d]);
            }
            let (loss, hg, _) = head_backward(head, norm, &feats, &batch_labels)?;
            total += loss * batch.len() as f64;
            head_w.update(&mut head.weight, &hg.weight, &adam, lr);
            let mut b = [head.bias];
            head_b.update(&mut b, &[hg.bias], &adam, lr);
            head.bias = b[0];
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: total / n as f64,
            lr,
        });
    }
    Ok(log)
}

/// ACC and AP of the detector on a labeled set.
pub fn evaluate(det: &Detector, set: &[ImageSample], exec: Exec) -> Result<Metrics> {
    if set.is_empty() {
        return Err(I2pError::Empty("evaluation set".into()));
    }
    let images: Vec<&[f64]> = set.iter().map(|s| s.pixels.as_slice()).collect();
    let labels: Vec<u8> = set.iter().map(|s| s.label).collect();
    let scores = det.scores(&images, exec)?;
    compute_metrics(&scores, &labels)
}
