use proptest::prelude::*;
use rand::Rng;

use i2p::encoder::LayerFeatureBundle;
use i2p::layer_scout::{
    aggregate, aggregate_topk, audit_scoring, identify_from_bundle, layer_distribution, layer_scores,
    weights_from_scores, Aggregation, BiasPlacement, IdentifyConfig, ScoringNet,
};
use i2p::numerics::{rng_for, Tensor};
use i2p::I2pError;

fn random_bundle(n: usize, l: usize, d: usize, seed: u64) -> LayerFeatureBundle {
    let mut rng = rng_for(seed, 0, 0);
    LayerFeatureBundle {
        features: Tensor::from_vec(&[n, l, d], (0..n * l * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
    }
}

/// Bundle where only `layer` separates the classes: its first coordinate is
/// shifted by ±1.5 with the label, every other entry is noise.
fn planted_bundle(n: usize, l: usize, d: usize, layer: usize, seed: u64) -> (LayerFeatureBundle, Vec<u8>) {
    let mut b = random_bundle(n, l, d, seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let data = b.features.data_mut();
    for (i, &y) in labels.iter().enumerate() {
        data[(i * l + layer - 1) * d] += if y == 1 { 1.5 } else { -1.5 };
    }
    (b, labels)
}

proptest! {
    #[test]
    fn shifting_a_sample_s_scores_leaves_weights_unchanged(
        seed in any::<u64>(), n in 1usize..8, l in 1usize..7, shift in -50.0f64..50.0
    ) {
        let mut rng = rng_for(seed, 0, 0);
        let s: Vec<f64> = (0..n * l).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = s.iter().enumerate().map(|(k, v)| v + shift * (k / l) as f64).collect();
        let a = weights_from_scores(&Tensor::from_vec(&[n, l], s).unwrap(), Aggregation::Mean).unwrap();
        let b = weights_from_scores(&Tensor::from_vec(&[n, l], shifted).unwrap(), Aggregation::Mean).unwrap();
        prop_assert!((a.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.pi.iter().zip(&b.pi) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let per = a.per_sample_pi.as_ref().unwrap();
        for i in 0..n {
            prop_assert!((per.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(a.critical_index >= 1 && a.critical_index <= l);
    }

    #[test]
    fn topk_is_a_renormalized_convex_combination(seed in any::<u64>(), k in 1usize..=6) {
        let (n, l, d) = (3, 6, 4);
        let bundle = random_bundle(n, l, d, seed);
        let mut rng = rng_for(seed, 1, 0);
        let s = Tensor::from_vec(&[n, l], (0..n * l).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let w = weights_from_scores(&s, Aggregation::Mean).unwrap();
        let top = w.top_layers(k).unwrap();
        for i in 0..n {
            let got = aggregate_topk(&bundle, &w, i, k).unwrap();
            let row = w.per_sample_pi.as_ref().unwrap().row(i);
            let z: f64 = top.iter().map(|&t| row[t - 1]).sum();
            for j in 0..d {
                let want: f64 = top.iter().map(|&t| row[t - 1] / z * bundle.get(i, t)[j]).sum();
                prop_assert!((got[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn printed_bias_placement_keeps_the_distribution(seed in any::<u64>()) {
        let bundle = random_bundle(5, 4, 6, seed);
        let mut net = ScoringNet::init(6, 8, seed).unwrap();
        let mut rng = rng_for(seed, 2, 0);
        for b in &mut net.b1 {
            *b = rng.random_range(-1.0..1.0);
        }
        for w in &mut net.w2 {
            *w = rng.random_range(-1.0..1.0);
        }
        net.placement = BiasPlacement::Printed;
        let printed = layer_distribution(&net, &bundle).unwrap();
        let scores = layer_scores(&net, &bundle).unwrap();
        net.b1.iter_mut().for_each(|b| *b = 0.0);
        let plain = layer_distribution(&net, &bundle).unwrap();
        let plain_scores = layer_scores(&net, &bundle).unwrap();
        // The bias only adds the same constant to every layer's score.
        let offset = scores.at(0, 0) - plain_scores.at(0, 0);
        for (a, b) in scores.data().iter().zip(plain_scores.data()) {
            prop_assert!((a - b - offset).abs() < 1e-12);
        }
        for (a, b) in printed.pi.iter().zip(&plain.pi) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn planted_layer_is_identified() {
    for layer in [2, 3, 5] {
        let (bundle, labels) = planted_bundle(400, 6, 8, layer, layer as u64);
        let cfg = IdentifyConfig {
            epochs: 30,
            ..Default::default()
        };
        let id = identify_from_bundle(&bundle, &labels, &cfg).unwrap();
        assert_eq!(id.report.critical_index, layer, "pi = {:?}", id.report.pi);
        assert_eq!(id.report.loss_curve.len(), 30 * 400 / 16);
        let vote = identify_from_bundle(&bundle, &labels, &IdentifyConfig { aggregation: Aggregation::Vote, ..cfg }).unwrap();
        assert_eq!(vote.report.critical_index, layer);
    }
}

#[test]
fn identification_is_deterministic() {
    let (bundle, labels) = planted_bundle(64, 4, 6, 2, 9);
    let cfg = IdentifyConfig::default();
    let a = identify_from_bundle(&bundle, &labels, &cfg).unwrap();
    let b = identify_from_bundle(&bundle, &labels, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.state, b.state);
}

#[test]
fn scoring_gradients_pass_the_audit_for_both_placements() {
    let (bundle, labels) = planted_bundle(10, 3, 5, 1, 4);
    for placement in [BiasPlacement::Inside, BiasPlacement::Printed] {
        let cfg = IdentifyConfig {
            placement,
            hidden: 6,
            ..Default::default()
        };
        let id = identify_from_bundle(&bundle, &labels, &cfg).unwrap();
        let (checked, worst) = audit_scoring(&id.state, &bundle, &labels, 1e-5).unwrap();
        assert_eq!(checked, 6 * 5 + 6 + 6 + 1 + 5 + 1);
        assert!(worst < 1e-5, "{placement:?}: {worst}");
    }
}

#[test]
fn uniform_scores_pick_the_first_layer_and_reduce_to_the_mean() {
    let bundle = random_bundle(2, 4, 3, 1);
    let w = weights_from_scores(&Tensor::zeros(&[2, 4]), Aggregation::Mean).unwrap();
    assert_eq!(w.critical_index, 1);
    assert_eq!(w.top_layers(4).unwrap(), vec![1, 2, 3, 4]);
    let agg = aggregate(&bundle, &w, 1).unwrap();
    for j in 0..3 {
        let mean = (1..=4).map(|l| bundle.get(1, l)[j]).sum::<f64>() / 4.0;
        assert!((agg[j] - mean).abs() < 1e-15);
    }
    assert!(w.top_layers(0).is_err());
    assert!(w.top_layers(5).is_err());
    assert!(aggregate(&bundle, &w, 2).is_err());
}

#[test]
fn single_class_labels_rejected() {
    let bundle = random_bundle(4, 3, 2, 0);
    let r = identify_from_bundle(&bundle, &[1, 1, 1, 1], &IdentifyConfig::default());
    assert!(matches!(r, Err(I2pError::SingleClass(_))));
    assert!(identify_from_bundle(&bundle, &[0, 1], &IdentifyConfig::default()).is_err());
}
