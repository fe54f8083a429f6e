//! Dense storage and the reference matrix-vector kernels.
//!
//! Every inner product is accumulated left to right in ascending column
//! order, one accumulator per output element. Kernels gain throughput by
//! interleaving independent outputs (rows or columns), never by splitting a
//! single sum, so any two code paths that reduce the same terms produce
//! bit-identical results.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ShapeError};

/// Floating-point element type of operators and models.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    const NAME: &'static str;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ConfigError> {
        if rows == 0 {
            return Err(ConfigError::Zero { field: "rows" });
        }
        if cols == 0 {
            return Err(ConfigError::Zero { field: "cols" });
        }
        if data.len() != rows * cols {
            return Err(ConfigError::FactorSize {
                field: "matrix".into(),
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self, ConfigError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ConfigError::Invalid("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: cast_slice(&self.data),
        }
    }

    /// `self * other`, summing over the shared index in ascending order.
    pub fn matmul(&self, other: &DenseMatrix<T>) -> Result<DenseMatrix<T>, ShapeError> {
        ShapeError::check("matmul", self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }
}

pub(crate) fn cast_slice<T: Scalar, U: Scalar>(src: &[T]) -> Vec<U> {
    src.iter()
        .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
        .collect()
}

/// Reference dense matrix-vector product.
pub fn mv_dense<T: Scalar>(a: &DenseMatrix<T>, x: &[T]) -> Result<Vec<T>, ShapeError> {
    ShapeError::check("mv_dense", a.cols, x.len())?;
    let mut y = vec![T::zero(); a.rows];
    gemv(a.rows, a.cols, &a.data, x, &mut y);
    Ok(y)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&u, &v) in a.iter().zip(b) {
        acc = acc + u * v;
    }
    acc
}

/// `y = W x` for a row-major `rows x cols` slice. Four rows are reduced in
/// lock-step to expose instruction-level parallelism.
pub(crate) fn gemv<T: Scalar>(rows: usize, cols: usize, w: &[T], x: &[T], y: &mut [T]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    let x = &x[..cols];
    let mut i = 0;
    while i + 4 <= rows {
        let r0 = &w[i * cols..(i + 1) * cols];
        let r1 = &w[(i + 1) * cols..(i + 2) * cols];
        let r2 = &w[(i + 2) * cols..(i + 3) * cols];
        let r3 = &w[(i + 3) * cols..(i + 4) * cols];
        let (mut a0, mut a1, mut a2, mut a3) = (T::zero(), T::zero(), T::zero(), T::zero());
        for j in 0..cols {
            let xj = x[j];
            a0 = a0 + r0[j] * xj;
            a1 = a1 + r1[j] * xj;
            a2 = a2 + r2[j] * xj;
            a3 = a3 + r3[j] * xj;
        }
        y[i] = a0;
        y[i + 1] = a1;
        y[i + 2] = a2;
        y[i + 3] = a3;
        i += 4;
    }
    while i < rows {
        y[i] = dot(&w[i * cols..(i + 1) * cols], x);
        i += 1;
    }
}

/// Applies `W` to `batch` column vectors stored back to back in `xs`
/// (`batch x cols`), writing `batch x rows` into `ys`. Each weight row is
/// streamed once per group of four columns; every output equals what
/// [`gemv`] computes for that column.
pub(crate) fn gemm_columns<T: Scalar>(
    rows: usize,
    cols: usize,
    w: &[T],
    batch: usize,
    xs: &[T],
    ys: &mut [T],
) {
    debug_assert_eq!(xs.len(), batch * cols);
    debug_assert_eq!(ys.len(), batch * rows);
    for i in 0..rows {
        let r = &w[i * cols..(i + 1) * cols];
        let mut t = 0;
        while t + 4 <= batch {
            let x0 = &xs[t * cols..(t + 1) * cols];
            let x1 = &xs[(t + 1) * cols..(t + 2) * cols];
            let x2 = &xs[(t + 2) * cols..(t + 3) * cols];
            let x3 = &xs[(t + 3) * cols..(t + 4) * cols];
            let (mut a0, mut a1, mut a2, mut a3) = (T::zero(), T::zero(), T::zero(), T::zero());
            for j in 0..cols {
                let rj = r[j];
                a0 = a0 + rj * x0[j];
                a1 = a1 + rj * x1[j];
                a2 = a2 + rj * x2[j];
                a3 = a3 + rj * x3[j];
            }
            ys[t * rows + i] = a0;
            ys[(t + 1) * rows + i] = a1;
            ys[(t + 2) * rows + i] = a2;
            ys[(t + 3) * rows + i] = a3;
            t += 4;
        }
        while t < batch {
            ys[t * rows + i] = dot(r, &xs[t * cols..(t + 1) * cols]);
            t += 1;
        }
    }
}

/// Normwise relative error `max_i |a_i - b_i| / max_i |b_i|`.
///
/// Per-element ratios are meaningless where a reference entry cancels to
/// (nearly) zero, so the error is scaled by the reference's largest entry.
pub fn max_rel_err<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_err on unequal lengths");
    let scale = b
        .iter()
        .map(|v| v.to_f64().unwrap().abs())
        .fold(0.0_f64, f64::max);
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).abs())
        .fold(0.0_f64, f64::max);
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_vector() {
        let a = DenseMatrix::<f64>::identity(3);
        assert_eq!(mv_dense(&a, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn small_product() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(mv_dense(&a, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn zero_matrix() {
        let a = DenseMatrix::<f64>::zeros(2, 2);
        assert_eq!(mv_dense(&a, &[5.0, -5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        let err = mv_dense(&a, &[1.0, 2.0]).unwrap_err();
        assert_eq!(err.expected, 3);
        assert_eq!(err.found, 2);
    }

    #[test]
    fn unrolled_rows_match_plain_dot() {
        let rows = 11;
        let cols = 7;
        let w: Vec<f64> = (0..rows * cols)
            .map(|k| ((k * 37 % 19) as f64 - 9.0) / 7.0)
            .collect();
        let x: Vec<f64> = (0..cols).map(|k| (k as f64 * 0.3).sin()).collect();
        let mut y = vec![0.0; rows];
        gemv(rows, cols, &w, &x, &mut y);
        for i in 0..rows {
            assert_eq!(y[i], dot(&w[i * cols..(i + 1) * cols], &x));
        }
    }

    #[test]
    fn batched_columns_match_gemv_bitwise() {
        let rows = 6;
        let cols = 5;
        let batch = 7;
        let w: Vec<f64> = (0..rows * cols).map(|k| (k as f64 * 1.7).cos()).collect();
        let xs: Vec<f64> = (0..batch * cols).map(|k| (k as f64 * 0.9).sin()).collect();
        let mut ys = vec![0.0; batch * rows];
        gemm_columns(rows, cols, &w, batch, &xs, &mut ys);
        for t in 0..batch {
            let mut y = vec![0.0; rows];
            gemv(rows, cols, &w, &xs[t * cols..(t + 1) * cols], &mut y);
            assert_eq!(&ys[t * rows..(t + 1) * rows], &y[..]);
        }
    }

    #[test]
    fn rel_err_scales_by_reference_norm() {
        assert_eq!(max_rel_err(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((max_rel_err(&[1.0, 2.1], &[1.0, 2.0]) - 0.05).abs() < 1e-12);
    }
}
