use proptest::prelude::*;
use rand::Rng;

use i2p::corpus::{synth_fake, synth_real, ArtifactSpec, ImageSample};
use i2p::encoder::{init_encoder, EncoderConfig, LinearId, LinearKind, ToyEncoder};
use i2p::knowledge_injector::{LayerMask, UpdateMask};
use i2p::numerics::rng_for;
use i2p::par::Exec;
use i2p::trainer::{
    audit_detector, average_precision, bce_with_logits, compute_metrics, evaluate, finetune, train_head,
    ClassifierHead, Detector, FeatureNorm, TrainConfig, TrainLog,
};

fn small_encoder() -> ToyEncoder {
    init_encoder(EncoderConfig {
        image_size: 16,
        patch_size: 4,
        depth: 2,
        width: 16,
        heads: 2,
        mlp_hidden: 32,
        seed: 3,
    })
    .unwrap()
}

fn small_corpus(n: usize) -> Vec<ImageSample> {
    let spec = ArtifactSpec::freq_spike(1.0, [0.2, 0.35]);
    let mut set = synth_real(n / 2, 1, 16);
    set.extend(synth_fake(n / 2, 1, &spec, 16).unwrap());
    set
}

fn detector(enc: ToyEncoder, train: &[ImageSample]) -> Detector {
    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let d = enc.config().width;
    let probe = Detector::new(enc.clone(), FeatureNorm::identity(d)).unwrap();
    let feats = probe.features(&images, Exec::Sequential).unwrap();
    Detector::new(enc, FeatureNorm::fit(&feats, d).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn bce_matches_the_direct_formula(z in -12.0f64..12.0, y in 0u8..=1) {
        let (loss, grad) = bce_with_logits(z, y as f64);
        let p = 1.0 / (1.0 + (-z).exp());
        let want = -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln());
        prop_assert!((loss - want).abs() <= 1e-9 * want.max(1e-3));
        prop_assert!((grad - (p - y as f64)).abs() < 1e-12);
    }

    #[test]
    fn bce_is_finite_for_extreme_logits(z in prop::num::f64::NORMAL, y in 0u8..=1) {
        let (loss, grad) = bce_with_logits(z, y as f64);
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.abs() <= 1.0);
    }

    #[test]
    fn feature_norm_standardizes_columns(n in 2usize..20, d in 1usize..6, seed in any::<u64>()) {
        let mut rng = rng_for(seed, 0, 0);
        let rows: Vec<f64> = (0..n * d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let norm = FeatureNorm::fit(&rows, d).unwrap();
        let out: Vec<f64> = rows.chunks(d).flat_map(|r| norm.apply(r)).collect();
        for j in 0..d {
            let col: Vec<f64> = out.iter().skip(j).step_by(d).copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9 || var == 0.0);
        }
    }

    #[test]
    fn ap_is_invariant_to_monotone_rescaling(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = rng_for(seed, 0, 0);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 1;
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        prop_assert_eq!(average_precision(&scores, &labels).unwrap(), average_precision(&squashed, &labels).unwrap());
    }
}

#[test]
fn step_schedule_decays_every_three_epochs() {
    let cfg = TrainConfig::default();
    let want = [1e-4, 1e-4, 1e-4, 7e-5, 7e-5, 7e-5, 4.9e-5, 4.9e-5, 4.9e-5];
    for (epoch, w) in (1..=9).zip(want) {
        assert!((cfg.lr_at(epoch) - w).abs() < 1e-18, "epoch {epoch}");
    }
}

#[test]
fn metrics_on_a_hand_ranked_example() {
    let m = compute_metrics(&[0.9, 0.8, 0.7, 0.2], &[1, 0, 1, 0]).unwrap();
    assert_eq!(m.ap, (1.0 + 2.0 / 3.0) / 2.0);
    assert_eq!(m.acc, 0.75);
    assert_eq!((m.n_pos, m.n_neg), (2, 2));
    assert!(average_precision(&[0.1, 0.2], &[0, 0]).is_err());
}

#[test]
fn detector_gradients_pass_the_audit() {
    let train = small_corpus(4);
    let mut det = detector(small_encoder(), &train);
    let mut rng = rng_for(5, 0, 0);
    det.head.weight.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    let r = audit_detector(&det, &images, &labels, 1e-5).unwrap();
    assert!(r.max_rel_err < 1e-4, "{} at {}", r.max_rel_err, r.worst);
}

#[test]
fn finetuning_only_moves_masked_weights() {
    let train = small_corpus(16);
    let enc = small_encoder();
    let before = detector(enc.clone(), &train);
    let id = LinearId::new(2, LinearKind::MlpIn);
    let lin = enc.linear(id).unwrap();
    let mut bits = vec![false; lin.weight.numel()];
    for i in [0, 5, 17, 40] {
        bits[i] = true;
    }
    let mut mask = UpdateMask::uniform(&Default::default(), false, 0.0);
    mask.layers.insert(
        id,
        LayerMask {
            rows: lin.out_dim(),
            cols: lin.in_dim(),
            bits: bits.clone(),
        },
    );
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-2,
        ..Default::default()
    };
    let mut det = before.clone();
    let log = finetune(&mut det, Some(&mask), &train, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 2);
    for pid in enc.param_ids() {
        let a = before.encoder.param(pid).unwrap();
        let b = det.encoder.param(pid).unwrap();
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            let open = pid.as_linear_weight() == Some(id) && bits[k];
            if open {
                assert_ne!(x, y, "{pid}[{k}] did not move");
            } else {
                assert_eq!(x.to_bits(), y.to_bits(), "{pid}[{k}] moved");
            }
        }
    }
    assert_ne!(det.head, before.head);
    assert_eq!(det.norm, before.norm);

    let mut again = before.clone();
    finetune(&mut again, Some(&mask), &train, &cfg).unwrap();
    assert_eq!(again, det);
}

#[test]
fn head_only_training_matches_finetune_without_mask() {
    let train = small_corpus(16);
    let base = detector(small_encoder(), &train);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        lr: 1e-2,
        ..Default::default()
    };
    let mut det = base.clone();
    let log = finetune(&mut det, None, &train, &cfg).unwrap();
    assert_eq!(det.encoder, base.encoder);

    let images: Vec<&[f64]> = train.iter().map(|s| s.pixels.as_slice()).collect();
    let flipped: Vec<Vec<f64>> = train.iter().map(|s| i2p::corpus::flip_horizontal(&s.pixels, 16)).collect();
    let flipped_refs: Vec<&[f64]> = flipped.iter().map(Vec::as_slice).collect();
    let plain = base.features(&images, Exec::Sequential).unwrap();
    let mirror = base.features(&flipped_refs, Exec::Sequential).unwrap();
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    let mut head = ClassifierHead::zeros(base.encoder.config().width);
    let head_log = train_head(&mut head, &base.norm, &plain, Some(&mirror), &labels, &cfg).unwrap();
    assert_eq!(head, det.head);
    assert_eq!(head_log, log);
}

#[test]
fn training_improves_separable_data() {
    let train = small_corpus(32);
    let mut det = detector(small_encoder(), &train);
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        lr: 5e-2,
        augment_flip: false,
        ..Default::default()
    };
    let log = finetune(&mut det, None, &train, &cfg).unwrap();
    let first = log.epochs.first().unwrap().loss;
    let last = log.epochs.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
    let m = evaluate(&det, &train, Exec::Parallel).unwrap();
    assert_eq!(m, evaluate(&det, &train, Exec::Sequential).unwrap());
    assert_eq!(m.scores.len(), 32);
}

#[test]
fn detector_checkpoint_and_log_round_trip() {
    let train = small_corpus(4);
    let mut det = detector(small_encoder(), &train);
    det.head.bias = 0.25;
    let back = Detector::from_checkpoint(&det.to_checkpoint().unwrap()).unwrap();
    assert_eq!(back, det);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let log = finetune(
        &mut det,
        None,
        &train,
        &TrainConfig {
            epochs: 2,
            ..Default::default()
        },
    )
    .unwrap();
    log.write_csv(&path).unwrap();
    assert_eq!(TrainLog::read_csv(&path).unwrap(), log);
}

#[test]
fn invalid_training_inputs_rejected() {
    let mut det = Detector::new(small_encoder(), FeatureNorm::identity(16)).unwrap();
    assert!(finetune(&mut det, None, &[], &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    assert!(finetune(&mut det, None, &small_corpus(2), &bad).is_err());
    assert!(FeatureNorm::fit(&[1.0, 2.0, 3.0], 2).is_err());
    let mut head = ClassifierHead::zeros(16);
    let r = train_head(&mut head, &det.norm, &[0.0; 16], None, &[1], &TrainConfig::default());
    assert!(r.is_err(), "flip augmentation without mirrored features");
}
