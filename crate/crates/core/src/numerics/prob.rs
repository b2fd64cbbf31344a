use crate::error::{I2pError, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(I2pError::Empty("softmax of empty vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(I2pError::NonFinite("softmax input".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(I2pError::Distribution("empty distribution".into()));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(I2pError::Distribution(format!("invalid probability {x}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(I2pError::Distribution(format!("sums to {total}, not 1")));
    }
    Ok(-p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>())
}

/// Index of the maximum, ties resolved to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let t = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((t[0] - 0.25).abs() < 1e-15 && (t[1] - 0.75).abs() < 1e-15);
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((shannon_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let h = shannon_entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.039_720_770_839_918).abs() < 1e-12);
        assert!((h - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!(shannon_entropy(&[0.5, 0.6]).is_err());
        assert!(shannon_entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[0.5; 5]), 0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn softmax_normalized_and_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 2..=32)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + 1000.0).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(argmax_lowest(&p), argmax_lowest(&v));
        }

        #[test]
        fn uniform_maximizes_entropy(w in prop::collection::vec(0.0f64..1.0, 2..=16)) {
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-9);
            let p: Vec<f64> = w.iter().map(|x| x / total).collect();
            let uniform = vec![1.0 / p.len() as f64; p.len()];
            let h = shannon_entropy(&p).unwrap();
            prop_assert!(h <= shannon_entropy(&uniform).unwrap() + 1e-12);
            prop_assert!(h >= 0.0);
        }
    }
}
