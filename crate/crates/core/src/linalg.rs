//! Small dense matrices for the M×M posterior covariances.
//!
//! Embedding dimensions are tiny (tens at most), so a row-major `Vec`
//! with a hand-written Cholesky is all the linear algebra the model needs.

use serde::{Deserialize, Serialize};

use crate::error::{JnetError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = s;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// `v vᵀ`
    pub fn outer(v: &[T]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = v[i] * v[j];
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    /// `self += s · v vᵀ`
    pub fn add_outer(&mut self, v: &[T], s: T) {
        let n = self.rows;
        for i in 0..n {
            let si = s * v[i];
            for j in 0..n {
                self.data[i * n + j] = self.data[i * n + j] + si * v[j];
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    /// Frobenius inner product `tr(Aᵀ B)`.
    pub fn frobenius(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows).map(|r| crate::scalar::dot(self.row(r), v)).collect()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Lower-triangular Cholesky factor, `None` when not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    /// Inverse and log-determinant of a symmetric positive-definite matrix.
    ///
    /// On factorization failure a diagonal jitter of 1e-10 is added and
    /// escalated tenfold up to 1e-6 before giving up.
    pub fn spd_inverse(&self) -> Result<SpdInverse<T>> {
        let n = self.rows;
        let mut jitter = 0.0;
        loop {
            let mut a = self.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    a[(i, i)] = a[(i, i)] + T::lit(jitter);
                }
            }
            if let Some(l) = a.cholesky() {
                return Ok(SpdInverse::from_factor(&l, T::lit(jitter)));
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e-6 * 1.000_001 {
                return Err(JnetError::Singular(format!("{n}x{n} precision matrix")));
            }
        }
    }
}

/// Result of [`Mat::spd_inverse`].
#[derive(Debug, Clone)]
pub struct SpdInverse<T> {
    pub inverse: Mat<T>,
    /// log-determinant of the inverse (i.e. of the covariance)
    pub log_det: T,
    pub jitter: T,
}

impl<T: Real> SpdInverse<T> {
    fn from_factor(l: &Mat<T>, jitter: T) -> Self {
        let n = l.rows;
        // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹
        let mut linv = Mat::zeros(n, n);
        for c in 0..n {
            for i in c..n {
                let mut s = if i == c { T::one() } else { T::zero() };
                for k in c..i {
                    s = s - l[(i, k)] * linv[(k, c)];
                }
                linv[(i, c)] = s / l[(i, i)];
            }
        }
        let mut inv = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = T::zero();
                for k in i..n {
                    s = s + linv[(k, i)] * linv[(k, j)];
                }
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        let log_det_a: T = (0..n).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0);
        Self { inverse: inv, log_det: -log_det_a, jitter }
    }
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn spd_log_det<T: Real>(m: &Mat<T>) -> Result<T> {
    let l = m
        .cholesky()
        .ok_or_else(|| JnetError::Singular("covariance is not positive definite".into()))?;
    Ok((0..m.rows()).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0))
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let a = Mat::from_rows(2, 2, vec![4.0f64, 2.0, 2.0, 3.0]);
        let inv = a.spd_inverse().unwrap();
        // det = 8, inverse = [3 -2; -2 4] / 8
        let want = [3.0 / 8.0, -0.25, -0.25, 0.5];
        for (got, w) in inv.inverse.as_slice().iter().zip(want) {
            assert!((got - w).abs() < 1e-14);
        }
        assert!((inv.log_det + 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn product_with_inverse_is_identity() {
        let n = 4;
        let mut a = Mat::scaled_identity(n, 0.5);
        a.add_outer(&[1.0, -2.0, 0.5, 3.0], 1.0);
        a.add_outer(&[0.1, 0.2, -0.3, 0.4], 2.0);
        let inv = a.spd_inverse().unwrap().inverse;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| a[(i, k)] * inv[(k, j)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12, "({i},{j}) = {s}");
            }
        }
        assert!(inv.asymmetry() == 0.0);
    }

    #[test]
    fn singular_matrix_is_rejected_after_jitter() {
        let a = Mat::from_rows(2, 2, vec![1.0, 1.0, 1.0, 1.0 - 1e-3]);
        assert!(matches!(a.spd_inverse(), Err(JnetError::Singular(_))));
    }

    #[test]
    fn tiny_negative_pivot_is_rescued_by_jitter() {
        let a = Mat::from_rows(2, 2, vec![1.0, 1.0, 1.0, 1.0 - 1e-12]);
        let inv = a.spd_inverse().unwrap();
        assert!(inv.jitter > 0.0);
    }
}
