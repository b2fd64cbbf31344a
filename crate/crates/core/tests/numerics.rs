use nalgebra::DMatrix;
use proptest::prelude::*;

use i2p::numerics::{
    argmax_lowest, matmul_nn, matmul_nt, matmul_tn, rng_for, shannon_entropy, singular_values, softmax,
    spd_inverse_diag, symmetric_eigenvalues, truncated_normal, SpdMatrix,
};
use i2p::I2pError;

fn gauss_jordan_inverse(a: &[f64], d: usize) -> Vec<f64> {
    let w = 2 * d;
    let mut m = vec![0.0; d * w];
    for i in 0..d {
        m[i * w..i * w + d].copy_from_slice(&a[i * d..(i + 1) * d]);
        m[i * w + d + i] = 1.0;
    }
    for col in 0..d {
        let piv = (col..d).max_by(|&x, &y| m[x * w + col].abs().total_cmp(&m[y * w + col].abs())).unwrap();
        for j in 0..w {
            m.swap(col * w + j, piv * w + j);
        }
        let p = m[col * w + col];
        for v in &mut m[col * w..(col + 1) * w] {
            *v /= p;
        }
        for r in (0..d).filter(|&r| r != col) {
            let f = m[r * w + col];
            for j in 0..w {
                m[r * w + j] -= f * m[col * w + j];
            }
        }
    }
    (0..d * d).map(|k| m[(k / d) * w + d + k % d]).collect()
}

/// `XᵀX / rows + λ I` from a random `rows × d` block.
fn spd_from(x: &[f64], d: usize, lambda: f64) -> Vec<f64> {
    let rows = x.len() / d;
    let mut a = vec![0.0; d * d];
    for r in x.chunks(d) {
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] += r[i] * r[j];
            }
        }
    }
    for (k, v) in a.iter_mut().enumerate() {
        *v /= rows as f64;
        if k / d == k % d {
            *v += lambda;
        }
    }
    a
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-2.0f64..2.0, r * c)))
}

proptest! {
    #[test]
    fn inverse_diagonal_matches_gauss_jordan((rows, d, x) in matrix(24, 12), lambda in 1e-4f64..1.0) {
        let a = spd_from(&x, d, lambda);
        let got = spd_inverse_diag(&SpdMatrix::new(d, a.clone()).unwrap()).unwrap();
        let inv = gauss_jordan_inverse(&a, d);
        for j in 0..d {
            let want = inv[j * d + j];
            prop_assert!((got[j] - want).abs() <= 1e-9 * want.abs(), "rows {rows} j {j}: {} vs {want}", got[j]);
        }
    }

    #[test]
    fn eigenvalues_match_nalgebra((_, d, x) in matrix(12, 10)) {
        let a = spd_from(&x, d, 0.0);
        let mut got = symmetric_eigenvalues(d, &a).unwrap();
        let mut want: Vec<f64> = DMatrix::from_row_slice(d, d, &a).symmetric_eigenvalues().iter().copied().collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn singular_values_match_nalgebra((r, c, x) in matrix(12, 10)) {
        let mut got = singular_values(r, c, &x).unwrap();
        let mut want: Vec<f64> = DMatrix::from_row_slice(r, c, &x).singular_values().iter().copied().collect();
        got.sort_by(|a, b| b.total_cmp(a));
        want.sort_by(|a, b| b.total_cmp(a));
        let scale = want.first().copied().unwrap_or(1.0).max(1.0);
        for (k, w) in want.iter().enumerate() {
            let g = got.get(k).copied().unwrap_or(0.0);
            prop_assert!((g - w).abs() <= 1e-10 * scale, "{got:?} vs {want:?}");
        }
        for g in got.iter().skip(want.len()) {
            prop_assert!(g.abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn gemm_variants_match_naive(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = rng_for(seed, 0, 0);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let naive: Vec<f64> = (0..m * n)
            .map(|ij| (0..k).map(|p| a[(ij / n) * k + p] * b[p * n + ij % n]).sum())
            .collect();
        let close = |c: &[f64]| c.iter().zip(&naive).all(|(x, y)| (x - y).abs() < 1e-12);

        let mut c = vec![0.0; m * n];
        matmul_nn(&a, &b, &mut c, m, k, n, false);
        prop_assert!(close(&c));

        let bt: Vec<f64> = (0..n * k).map(|jp| b[(jp % k) * n + jp / k]).collect();
        let mut c = vec![0.0; m * n];
        matmul_nt(&a, &bt, &mut c, m, k, n, false);
        prop_assert!(close(&c));

        let at: Vec<f64> = (0..k * m).map(|pi| a[(pi % m) * k + pi / m]).collect();
        let mut c = vec![1.0; m * n];
        matmul_tn(&at, &b, &mut c, k, m, n, true);
        prop_assert!(c.iter().zip(&naive).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-700.0f64..700.0, 1..20)) {
        let p = softmax(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let h = shannon_entropy(&p).unwrap();
        prop_assert!(h >= 0.0 && h <= (v.len() as f64).ln() + 1e-12);
        prop_assert_eq!(argmax_lowest(&p), argmax_lowest(&v));
    }

    #[test]
    fn truncated_normal_stays_within_two_std(seed in any::<u64>(), std in 1e-3f64..10.0) {
        let mut rng = rng_for(seed, 1, 2);
        for _ in 0..50 {
            prop_assert!(truncated_normal(&mut rng, std).abs() <= 2.0 * std);
        }
    }
}

#[test]
fn argmax_ties_go_to_lowest_index() {
    assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax_lowest(&[0.5; 4]), 0);
}

#[test]
fn indefinite_matrix_reports_pivot() {
    let a = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0];
    match SpdMatrix::new(3, a).unwrap().cholesky() {
        Err(I2pError::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
        other => panic!("unexpected {other:?}"),
    }
}
