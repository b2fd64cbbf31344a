//! Thin wrappers over `matrixmultiply::dgemm` for the three product shapes the
//! model needs. All operands are row-major slices. Each output element is a
//! dot product accumulated in a fixed order that does not depend on how many
//! rows are stacked into one call, so batched and per-sample results agree
//! bitwise.

/// `c = a · bᵀ (+ c)` with `a: m×k`, `b: n×k`, `c: m×n`.
pub fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe in-bounds row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a · b (+ c)` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = aᵀ · b (+ c)` with `a: r×m`, `b: r×n`, `c: m×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], r: usize, m: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), r * m);
    debug_assert_eq!(b.len(), r * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            r,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided variant used for per-head attention slices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    acc: bool,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) < c.len());
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
            }
        }
        c
    }

    fn seq(len: usize, s: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64) * s).sin()).collect()
    }

    #[test]
    fn products_match_naive() {
        let (m, k, n) = (7, 5, 3);
        let a = seq(m * k, 0.37);
        let b = seq(k * n, 0.91);
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_nn(&a, &b, &mut c, m, k, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        // b stored transposed (n×k)
        let mut bt = vec![0.0; n * k];
        for t in 0..k {
            for j in 0..n {
                bt[j * k + t] = b[t * n + j];
            }
        }
        matmul_nt(&a, &bt, &mut c, m, k, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for t in 0..k {
                at[t * m + i] = a[i * k + t];
            }
        }
        matmul_tn(&at, &b, &mut c, k, m, n, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn rows_are_independent_of_batch_height() {
        for &(k, n) in &[(64usize, 64usize), (64, 256), (256, 64), (48, 64)] {
            let m = 16 * 65;
            let a = seq(m * k, 0.0137);
            let w = seq(n * k, 0.291);
            let mut full = vec![0.0; m * n];
            matmul_nt(&a, &w, &mut full, m, k, n, false);
            for start in [0usize, 65, 130, 975] {
                let mut part = vec![0.0; 65 * n];
                matmul_nt(&a[start * k..(start + 65) * k], &w, &mut part, 65, k, n, false);
                assert_eq!(&full[start * n..(start + 65) * n], &part[..]);
            }
        }
    }
}
