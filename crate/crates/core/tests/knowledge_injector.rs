use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use i2p::encoder::{init_encoder, EncoderConfig, LinearId, LinearKind};
use i2p::knowledge_injector::{
    budget, build_mask, calibrate, compute_importance, importance_scores, masked_step, masked_step_indices,
    ActivationMoments, ImportanceMap, MaskScope, StepHyper, StepRule, UpdateMask,
};
use i2p::numerics::{rng_for, SpdMatrix, Tensor};
use i2p::par::Exec;
use i2p::trainer::{AdamConfig, AdamState};
use i2p::I2pError;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        image_size: 16,
        patch_size: 4,
        depth: 3,
        width: 16,
        heads: 2,
        mlp_hidden: 32,
        seed: 7,
    }
}

fn images(n: usize, pixels: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n as u64)
        .map(|i| {
            let mut rng = rng_for(seed, 3, i);
            (0..pixels).map(|_| rng.random::<f64>()).collect()
        })
        .collect()
}

fn random_map(layers: &[(usize, usize)], seed: u64, coarse: bool) -> ImportanceMap {
    let mut rng = rng_for(seed, 0, 0);
    let mut map = ImportanceMap::default();
    for (k, &(r, c)) in layers.iter().enumerate() {
        let data = (0..r * c)
            .map(|_| if coarse { rng.random_range(0..4) as f64 } else { rng.random::<f64>() })
            .collect();
        map.scores
            .insert(LinearId::new(k + 1, LinearKind::MlpIn), Tensor::from_vec(&[r, c], data).unwrap());
    }
    map
}

proptest! {
    #[test]
    fn accumulation_is_independent_of_row_grouping(
        rows in 1usize..30, d in 1usize..8, split in 0usize..30, seed in any::<u64>()
    ) {
        let mut rng = rng_for(seed, 0, 0);
        let x: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let id = LinearId::new(1, LinearKind::O);
        let cut = split.min(rows) * d;
        let mut whole = ActivationMoments::new(1e-4).unwrap();
        whole.accumulate(id, &x, d).unwrap();
        let mut parts = ActivationMoments::new(1e-4).unwrap();
        parts.accumulate(id, &x[..cut], d).unwrap();
        parts.accumulate(id, &x[cut..], d).unwrap();
        prop_assert_eq!(whole.accumulator(id).unwrap(), parts.accumulator(id).unwrap());
        prop_assert_eq!(whole.rows(id), rows);
    }

    #[test]
    fn global_mask_takes_exactly_the_budget_of_lowest_scores(
        eta in 0.0f64..=1.0, seed in any::<u64>(), coarse in any::<bool>()
    ) {
        let map = random_map(&[(3, 5), (4, 2), (1, 7)], seed, coarse);
        let mask = build_mask(&map, eta, MaskScope::Global).unwrap();
        prop_assert_eq!(mask.ones(), budget(eta, map.total()));
        prop_assert_eq!(mask.total(), map.total());
        let mut open = f64::NEG_INFINITY;
        let mut frozen = f64::INFINITY;
        for (id, t) in &map.scores {
            for (i, &s) in t.data().iter().enumerate() {
                if mask.layer(*id).unwrap().bits[i] {
                    open = open.max(s);
                } else {
                    frozen = frozen.min(s);
                }
            }
        }
        prop_assert!(open <= frozen);
    }

    #[test]
    fn per_layer_mask_budgets_each_layer(eta in 0.0f64..=1.0, seed in any::<u64>()) {
        let map = random_map(&[(3, 5), (4, 2), (1, 7)], seed, false);
        let mask = build_mask(&map, eta, MaskScope::PerLayer).unwrap();
        for (id, t) in &map.scores {
            prop_assert_eq!(mask.layer(*id).unwrap().ones(), budget(eta, t.numel()));
        }
    }

    #[test]
    fn mask_bytes_round_trip(eta in 0.0f64..=1.0, seed in any::<u64>()) {
        let map = random_map(&[(3, 5), (9, 1)], seed, false);
        let mask = build_mask(&map, eta, MaskScope::Global).unwrap();
        prop_assert_eq!(UpdateMask::from_bytes(&mask.to_bytes()).unwrap(), mask);
    }

    #[test]
    fn masked_step_leaves_frozen_entries_and_moments(
        bits in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>(), sgd in any::<bool>()
    ) {
        let n = bits.len();
        let mut rng = rng_for(seed, 0, 0);
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = p.clone();
        let mut state = AdamState::new(n);
        let hyper = StepHyper {
            lr: 0.01,
            rule: if sgd { StepRule::Sgd } else { StepRule::Adam(AdamConfig::default()) },
        };
        for _ in 0..3 {
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            masked_step(&mut p, &g, &bits, &mut state, &hyper).unwrap();
        }
        for i in 0..n {
            if bits[i] {
                prop_assert!(p[i] < before[i]);
            } else {
                prop_assert_eq!(p[i].to_bits(), before[i].to_bits());
                prop_assert_eq!(state.m[i], 0.0);
                prop_assert_eq!(state.v[i], 0.0);
            }
        }
    }
}

#[test]
fn importance_is_weight_squared_over_inverse_diagonal() {
    let h = SpdMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
    // [H⁻¹]_jj = 2/3 for both columns.
    let w = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
    let s = importance_scores(&w, &h).unwrap();
    let want = [1.5, 6.0, 0.375, 0.0];
    for (a, b) in s.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let wrong = Tensor::from_vec(&[1, 3], vec![1.0; 3]).unwrap();
    assert!(matches!(importance_scores(&wrong, &h), Err(I2pError::Shape(_))));
}

#[test]
fn calibration_batch_size_does_not_change_moments() {
    let cfg = small_config();
    let enc = init_encoder(cfg).unwrap();
    let imgs = images(19, cfg.pixels(), 1);
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let layers = LinearId::all(cfg.depth);
    let one = calibrate(&enc, &refs, &layers, 1e-4, 1).unwrap();
    let many = calibrate(&enc, &refs, &layers, 1e-4, 16).unwrap();
    assert_eq!(one, many);
    let tokens = (cfg.image_size / cfg.patch_size).pow(2) + 1;
    let id = LinearId::new(2, LinearKind::MlpOut);
    assert_eq!(one.rows(id), 19 * tokens);
    // Q, K and V read the same input.
    let q = one.accumulator(LinearId::new(1, LinearKind::Q)).unwrap();
    assert_eq!(q, one.accumulator(LinearId::new(1, LinearKind::V)).unwrap());
}

#[test]
fn importance_covers_every_eligible_weight() {
    let cfg = small_config();
    let enc = init_encoder(cfg).unwrap();
    let imgs = images(6, cfg.pixels(), 2);
    let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
    let moments = calibrate(&enc, &refs, &LinearId::all(cfg.depth), 1e-4, 4).unwrap();
    let (map, damping) = compute_importance(&enc, &moments, Exec::Parallel).unwrap();
    let (seq, _) = compute_importance(&enc, &moments, Exec::Sequential).unwrap();
    assert_eq!(map, seq);
    assert_eq!(map.total(), enc.eligible_count());
    assert!(damping.values().all(|&d| d >= 1e-4));
    assert!(map.scores.values().all(|t| t.data().iter().all(|s| s.is_finite() && *s >= 0.0)));
    let mask = build_mask(&map, 0.01, MaskScope::Global).unwrap();
    assert_eq!(mask.ones(), budget(0.01, enc.eligible_count()));
}

#[test]
fn singular_activations_raise_damping() {
    let id = LinearId::new(1, LinearKind::Q);
    let mut m = ActivationMoments::new(1e-300).unwrap();
    // Rank-deficient rows: second column is a copy of the first.
    m.accumulate(id, &[1.0, 1.0, 2.0, 2.0], 2).unwrap();
    match m.finalize_hessian(id) {
        Ok((_, used)) => assert!(used >= 1e-300),
        Err(e) => assert!(matches!(e, I2pError::DampingExhausted { .. })),
    }
    assert!(ActivationMoments::new(0.0).is_err());
    assert!(m.finalize_hessian(LinearId::new(2, LinearKind::Q)).is_err());
}

#[test]
fn corrupt_mask_bytes_rejected() {
    let map = random_map(&[(2, 3)], 4, false);
    let bytes = build_mask(&map, 0.5, MaskScope::Global).unwrap().to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(UpdateMask::from_bytes(&bad), Err(I2pError::Format { .. })));
    assert!(UpdateMask::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(UpdateMask::from_bytes(&long).is_err());
}

#[test]
fn invalid_eta_and_indices_rejected() {
    let map = random_map(&[(2, 3)], 4, false);
    assert!(build_mask(&map, 1.5, MaskScope::Global).is_err());
    assert!(build_mask(&ImportanceMap::default(), 0.1, MaskScope::Global).is_err());
    let mut p = vec![0.0; 3];
    let mut s = AdamState::new(3);
    let hyper = StepHyper { lr: 0.1, rule: StepRule::Sgd };
    assert!(masked_step_indices(&mut p, &[1.0; 3], &[3], &mut s, &hyper).is_err());
    assert!(masked_step(&mut p, &[1.0; 3], &[true; 2], &mut s, &hyper).is_err());
    let shapes: BTreeMap<LinearId, (usize, usize)> = [(LinearId::new(1, LinearKind::O), (2, 2))].into();
    assert_eq!(UpdateMask::uniform(&shapes, true, 1.0).ones(), 4);
}
