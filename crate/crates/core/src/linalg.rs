//! Dense Cholesky factorization and batched lower-triangular products.
//!
//! Matrices are row-major `Vec<f64>`. Batches of vectors are stored
//! path-major: vector `p` occupies `z[p * stride .. p * stride + dim]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Jitter levels tried in turn, relative to the largest diagonal entry.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-13, 1e-12];

/// Row block height for the blocked triangular product.
const ROW_BLOCK: usize = 64;

/// A lower-triangular Cholesky factor `L` with `L L^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes a symmetric matrix, escalating diagonal jitter along
    /// [`JITTER_LADDER`] when a pivot is not positive.
    pub fn factor(a: &[f64], dim: usize) -> Result<Self> {
        assert_eq!(a.len(), dim * dim, "matrix size mismatch");
        let max_diag = (0..dim).map(|i| a[i * dim + i]).fold(0.0_f64, f64::max);
        let mut last_err = None;
        for rel in JITTER_LADDER {
            let jitter = rel * max_diag;
            match factor_with_jitter(a, dim, jitter) {
                Ok(lower) => return Ok(Self { dim, lower, jitter }),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or(Error::NotPsd { pivot: 0, value: 0.0, jitter: 0.0 }))
    }

    /// Factorizes a positive semidefinite matrix, giving pivots within
    /// `tol` of zero a zero column instead of failing.
    pub fn factor_semidefinite(a: &[f64], dim: usize, tol: f64) -> Result<Self> {
        assert_eq!(a.len(), dim * dim, "matrix size mismatch");
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let (ri, rj) = (i * dim, j * dim);
                let s = a[ri + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
                if i == j {
                    if s < -tol || !s.is_finite() {
                        return Err(Error::NotPsd { pivot: i, value: s, jitter: 0.0 });
                    }
                    l[ri + i] = if s <= tol { 0.0 } else { libm::sqrt(s) };
                } else {
                    let d = l[rj + j];
                    l[ri + j] = if d == 0.0 { 0.0 } else { s / d };
                }
            }
        }
        Ok(Self { dim, lower: l, jitter: 0.0 })
    }

    /// Factorizes without any jitter.
    pub fn factor_exact(a: &[f64], dim: usize) -> Result<Self> {
        factor_with_jitter(a, dim, 0.0).map(|lower| Self { dim, lower, jitter: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Absolute diagonal jitter that was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Row-major lower factor.
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn into_lower(self) -> Vec<f64> {
        self.lower
    }

    /// `y_p = L z_p` for every vector in the batch.
    pub fn apply_batch(&self, z: &[f64], y: &mut [f64], n_vectors: usize) {
        lower_times_batch(&self.lower, self.dim, self.dim, z, self.dim, y, self.dim, n_vectors, false);
    }
}

fn factor_with_jitter(a: &[f64], dim: usize, jitter: f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let (ri, rj) = (i * dim, j * dim);
            let s = a[ri + j] - dot(&l[ri..ri + j], &l[rj..rj + j]);
            if i == j {
                let d = s + jitter;
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::NotPsd { pivot: i, value: d, jitter });
                }
                l[ri + i] = libm::sqrt(d);
            } else {
                l[ri + j] = s / l[rj + j];
            }
        }
    }
    Ok(l)
}

/// Dot product with four independent partial sums.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y_p[0..rows] (+)= A z_p[0..rows]` for a batch, where row `i` of the
/// row-major `rows x lda` matrix `A` is zero beyond column `i`.
///
/// Works on row blocks so only the nonzero triangle (plus the diagonal
/// blocks) is multiplied.
#[allow(clippy::too_many_arguments)]
pub fn lower_times_batch(
    a: &[f64],
    lda: usize,
    rows: usize,
    z: &[f64],
    z_stride: usize,
    y: &mut [f64],
    y_stride: usize,
    n_vectors: usize,
    accumulate: bool,
) {
    if rows == 0 || n_vectors == 0 {
        return;
    }
    assert!(a.len() >= rows * lda && lda >= rows);
    assert!(z.len() >= (n_vectors - 1) * z_stride + rows);
    assert!(y.len() >= (n_vectors - 1) * y_stride + rows);
    let beta = if accumulate { 1.0 } else { 0.0 };
    let mut r0 = 0;
    while r0 < rows {
        let r1 = (r0 + ROW_BLOCK).min(rows);
        // SAFETY: bounds asserted above; A block is (r1-r0) x r1 at row r0,
        // Z block is the first r1 entries of each vector, C block the
        // entries r0..r1 of each output vector. Output does not alias inputs.
        unsafe {
            matrixmultiply::dgemm(
                r1 - r0,
                r1,
                n_vectors,
                1.0,
                a.as_ptr().add(r0 * lda),
                lda as isize,
                1,
                z.as_ptr(),
                1,
                z_stride as isize,
                beta,
                y.as_mut_ptr().add(r0),
                1,
                y_stride as isize,
            );
        }
        r0 = r1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Vec<f64> {
        // min(i+1, j+1): Brownian covariance on an integer grid
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (i.min(j) + 1) as f64;
            }
        }
        a
    }

    #[test]
    fn reconstructs_matrix() {
        let n = 37;
        let a = spd(n);
        let c = Cholesky::factor(&a, n).unwrap();
        assert_eq!(c.jitter(), 0.0);
        let l = c.lower();
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                assert!((s - a[i * n + j]).abs() < 1e-10);
            }
        }
        // Brownian covariance factors into a matrix of ones below the diagonal
        assert!((l[(n - 1) * n] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(Cholesky::factor(&a, 2), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn singular_psd_needs_jitter() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let c = Cholesky::factor(&a, 2).unwrap();
        assert!(c.jitter() > 0.0 && c.jitter() <= 1e-12);
    }

    #[test]
    fn semidefinite_factor_zeroes_null_directions() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let c = Cholesky::factor_semidefinite(&a, 2, 1e-14).unwrap();
        assert_eq!(c.lower(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn batched_product_matches_naive() {
        let n = 150;
        let a = spd(n);
        let c = Cholesky::factor(&a, n).unwrap();
        let nv = 7;
        let stride = n + 3;
        let z: Vec<f64> = (0..nv * stride).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let mut y = vec![0.0; nv * stride];
        lower_times_batch(c.lower(), n, n, &z, stride, &mut y, stride, nv, false);
        for p in 0..nv {
            for i in 0..n {
                let want: f64 = (0..=i).map(|k| c.lower()[i * n + k] * z[p * stride + k]).sum();
                assert!((y[p * stride + i] - want).abs() < 1e-9);
            }
        }
    }
}
