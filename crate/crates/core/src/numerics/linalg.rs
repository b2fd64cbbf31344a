use crate::error::{I2pError, Result};

/// Symmetric positive-definite matrix in dense row-major storage.
///
/// Symmetry is exact: constructors either mirror an upper triangle or reject
/// inputs whose mirrored entries differ.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(I2pError::Shape(format!(
                "spd matrix of dim {dim} needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(I2pError::InvalidArgument(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(I2pError::NonFinite("spd matrix".into()));
        }
        Ok(SpdMatrix { dim, data })
    }

    /// Builds `upper / n + damping · I`, reading only the upper triangle of
    /// `upper` and mirroring it.
    pub fn from_upper_scaled(dim: usize, upper: &[f64], n: usize, damping: f64) -> Result<Self> {
        if n == 0 {
            return Err(I2pError::Empty("no activation rows accumulated".into()));
        }
        let inv_n = 1.0 / n as f64;
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let mut v = upper[i * dim + j] * inv_n;
                if i == j {
                    v += damping;
                }
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        SpdMatrix::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let mut diag = self.data[j * d + j];
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(I2pError::NotPositiveDefinite { pivot: j });
            }
            let ljj = diag.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = self.data[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
        }
        Ok(l)
    }
}

/// Diagonal of `A⁻¹` via Cholesky: `[A⁻¹]_jj = ‖L⁻¹ e_j‖²`, one forward
/// substitution per column.
pub fn spd_inverse_diag(a: &SpdMatrix) -> Result<Vec<f64>> {
    let d = a.dim();
    let l = a.cholesky()?;
    let mut out = Vec::with_capacity(d);
    let mut y = vec![0.0; d];
    for j in 0..d {
        // L y = e_j; y_i = 0 for i < j.
        y[..j].fill(0.0);
        let mut sq = 0.0;
        for i in j..d {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in j..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
            sq += y[i] * y[i];
        }
        out.push(sq);
    }
    Ok(out)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending.
pub fn symmetric_eigenvalues(dim: usize, matrix: &[f64]) -> Result<Vec<f64>> {
    if matrix.len() != dim * dim {
        return Err(I2pError::Shape("eigen input must be square".into()));
    }
    let mut a = matrix.to_vec();
    let n = dim;
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    Ok(eig)
}

/// Singular values of a row-major `rows × cols` matrix by one-sided
/// (Hestenes) Jacobi orthogonalization, sorted descending. Returns
/// `min(rows, cols)` values.
pub fn singular_values(rows: usize, cols: usize, matrix: &[f64]) -> Result<Vec<f64>> {
    if matrix.len() != rows * cols {
        return Err(I2pError::Shape("svd input size mismatch".into()));
    }
    // Orthogonalize the shorter side's vectors: columns when rows >= cols.
    let (len, count, vecs) = if rows >= cols {
        let mut v = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                v[j * rows + i] = matrix[i * cols + j];
            }
        }
        (rows, cols, v)
    } else {
        (cols, rows, matrix.to_vec())
    };
    let mut v = vecs;
    let dot = |v: &[f64], p: usize, q: usize| -> f64 {
        v[p * len..(p + 1) * len]
            .iter()
            .zip(&v[q * len..(q + 1) * len])
            .map(|(a, b)| a * b)
            .sum()
    };
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..count {
            for q in (p + 1)..count {
                let alpha = dot(&v, p, p);
                let beta = dot(&v, q, q);
                let gamma = dot(&v, p, q);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = v.split_at_mut(q * len);
                let vp = &mut lo[p * len..(p + 1) * len];
                let vq = &mut hi[..len];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let a = *x;
                    let b = *y;
                    *x = c * a - s * b;
                    *y = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..count).map(|p| dot(&v, p, p).sqrt()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_diag_of_diagonal_matrix() {
        let a = SpdMatrix::new(2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let d = spd_inverse_diag(&a).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inverse_diag_of_two_by_two() {
        let a = SpdMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let d = spd_inverse_diag(&a).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let a = SpdMatrix::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 2.0, 1.0]).unwrap();
        match spd_inverse_diag(&a) {
            Err(I2pError::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 2),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(SpdMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
    }

    #[test]
    fn upper_triangle_is_mirrored() {
        let upper = vec![4.0, 2.0, 99.0, 6.0];
        let h = SpdMatrix::from_upper_scaled(2, &upper, 2, 0.5).unwrap();
        assert_eq!(h.data(), &[2.5, 1.0, 1.0, 3.5]);
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let e = symmetric_eigenvalues(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_values_of_known_matrix() {
        // diag(3, 2) padded with a zero row.
        let sv = singular_values(3, 2, &[3.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert!((sv[0] - 3.0).abs() < 1e-12 && (sv[1] - 2.0).abs() < 1e-12);
        let wide = singular_values(2, 3, &[3.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(wide.len(), 2);
        assert!((wide[0] - 3.0).abs() < 1e-12);
    }
}
