use proptest::prelude::*;
use rand::Rng;

use i2p::backbone::{
    blur, colour_layout, image_statistics, patch_statistics, pretrain, pretrain_with, PretrainConfig, ENERGY_FLOOR,
    LAYOUT_DIM, PATCH_DIM,
};
use i2p::encoder::{init_encoder, EncoderConfig};
use i2p::numerics::rng_for;

fn tiny() -> (EncoderConfig, PretrainConfig) {
    let enc = EncoderConfig {
        image_size: 16,
        patch_size: 4,
        depth: 4,
        width: 16,
        heads: 2,
        mlp_hidden: 32,
        seed: 1,
    };
    let pre = PretrainConfig {
        steps: 6,
        batch_size: 2,
        warmup: 2,
        ..Default::default()
    };
    (enc, pre)
}

/// Mean square of `x − Bx` over one patch, straight from the definition.
fn direct_high_pass(pixels: &[f64], size: usize, patch: usize, py: usize, px: usize) -> f64 {
    let b = blur(pixels, size);
    let mut e = 0.0;
    for y in py * patch..(py + 1) * patch {
        for x in px * patch..(px + 1) * patch {
            for c in 0..3 {
                let i = (y * size + x) * 3 + c;
                e += (pixels[i] - b[i]).powi(2);
            }
        }
    }
    e / (patch * patch * 3) as f64
}

proptest! {
    #[test]
    fn patch_statistics_follow_their_definition(seed in any::<u64>(), py in 0usize..4, px in 0usize..4) {
        let mut rng = rng_for(seed, 0, 0);
        let pixels: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random::<f64>()).collect();
        let stats = patch_statistics(&pixels, 16, 4);
        prop_assert_eq!(stats.len(), 16);
        let want = (direct_high_pass(&pixels, 16, 4, py, px) + ENERGY_FLOOR).ln();
        prop_assert!((stats[py * 4 + px][0] - want).abs() < 1e-12);
        prop_assert!(stats.iter().all(|s| s.iter().all(|v| v.is_finite() && *v >= ENERGY_FLOOR.ln())));
    }

    #[test]
    fn blur_preserves_constants_and_range(level in 0.0f64..=1.0, seed in any::<u64>()) {
        let flat = vec![level; 8 * 8 * 3];
        prop_assert!(blur(&flat, 8).iter().all(|v| (v - level).abs() < 1e-15));
        let mut rng = rng_for(seed, 0, 0);
        let noisy: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.random::<f64>()).collect();
        prop_assert!(blur(&noisy, 8).iter().all(|v| (-1e-15..=1.0 + 1e-15).contains(v)));
    }
}

#[test]
fn flat_images_sit_at_the_energy_floor() {
    let flat = vec![0.4; 16 * 16 * 3];
    for s in patch_statistics(&flat, 16, 4) {
        assert_eq!(s, [ENERGY_FLOOR.ln(); PATCH_DIM]);
    }
    assert!(image_statistics(&flat, 16).iter().all(|v| v.is_finite()));
    let layout = colour_layout(&flat, 16);
    assert_eq!(layout.len(), LAYOUT_DIM);
    assert!(layout.iter().all(|v| (v - 0.4).abs() < 1e-12));
}

#[test]
fn pretraining_is_deterministic_and_moves_weights() {
    let (enc, pre) = tiny();
    let mut seen = 0;
    let (a, log) = pretrain_with(enc, &pre, |_| seen += 1).unwrap();
    let (b, _) = pretrain(enc, &pre).unwrap();
    assert_eq!(a, b);
    assert_eq!(seen, pre.steps);
    assert_eq!(log.steps.len(), pre.steps);
    assert!(log.steps.iter().all(|s| s.patch_loss.is_finite() && s.stats_loss.is_finite()));
    assert_ne!(a, init_encoder(enc).unwrap());
    let other = PretrainConfig { seed: 9, ..pre };
    assert_ne!(pretrain(enc, &other).unwrap().0, a);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    log.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), pre.steps + 1);
    assert!(text.starts_with("step,lr,patch_loss"));
}

#[test]
fn block_layers_must_fit_the_encoder() {
    let pre = PretrainConfig::default();
    assert_eq!(pre.resolved_stats_layer(8), 4);
    assert_eq!(pre.resolved_patch_layer(8), 4);
    assert!(pre.validate(8).is_ok());
    assert!(PretrainConfig { stats_layer: 8, ..pre }.validate(8).is_err());
    assert!(PretrainConfig { patch_layer: 9, ..pre }.validate(8).is_err());
    assert!(PretrainConfig { batch_size: 0, ..pre }.validate(8).is_err());
    assert!(pre.validate(1).is_err());
}
