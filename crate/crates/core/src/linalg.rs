//! Small dense linear algebra kernels used by the regression routines.
//!
//! Dimensions in this crate are modest (tens of features), so everything is
//! plain row-major storage with O(d^3) symmetric solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `n x d` matrix of context vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    /// Empty matrix with `cols` columns, ready for `push_row`.
    pub fn with_cols(cols: usize) -> Self {
        Self::zeros(0, cols)
    }

    pub fn from_row_major(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidInput("design matrix needs at least one column".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidInput("no rows given".into()))?;
        let mut m = Self::with_cols(cols);
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::InvalidInput(format!(
                "row has {} entries, matrix has {} columns",
                row.len(),
                self.cols
            )));
        }
        self.values.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.values[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `X b`
    pub fn mul_vec(&self, b: &[T]) -> Vec<T> {
        self.iter_rows().map(|r| dot(r, b)).collect()
    }

    /// `X^T X` (unnormalized), full symmetric `d x d`.
    pub fn gram(&self) -> SymMatrix<T> {
        let d = self.cols;
        let mut g = vec![T::zero(); d * d];
        for r in self.iter_rows() {
            for i in 0..d {
                let ri = r[i];
                if ri == T::zero() {
                    continue;
                }
                let gi = &mut g[i * d..(i + 1) * d];
                for j in i..d {
                    gi[j] += ri * r[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                g[i * d + j] = g[j * d + i];
            }
        }
        SymMatrix { n: d, values: g }
    }

    /// `X^T y`
    pub fn xt_vec(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x * yi;
            }
        }
        out
    }
}

/// Dense symmetric matrix (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![T::zero(); n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn mul_vec(&self, b: &[T]) -> Vec<T> {
        (0..self.n).map(|i| dot(self.row(i), b)).collect()
    }

    /// Eigen-decomposition by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues (unsorted) and the eigenvectors as the columns of a
    /// row-major `n x n` matrix.
    pub fn eigen(&self) -> (Vec<T>, Vec<T>) {
        let n = self.n;
        let mut a = self.values.clone();
        let mut v = vec![T::zero(); n * n];
        for i in 0..n {
            v[i * n + i] = T::one();
        }
        let total: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
        if total == T::zero() {
            return (vec![T::zero(); n], v);
        }
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off.sqrt() <= eps * total {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() <= T::min_positive_value() {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (T::of(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
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
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i * n + i]).collect(), v)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigen()
            .0
            .into_iter()
            .fold(T::infinity(), |acc, x| acc.min(x))
    }

    /// Solve `A x = b` by Cholesky; `None` if `A` is not positive definite.
    pub fn cholesky_solve(&self, b: &[T]) -> Option<Vec<T>> {
        let n = self.n;
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.values[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= T::zero() || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= l[i * n + k] * y[k];
            }
            y[i] = sum / l[i * n + i];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l[k * n + i] * x[k];
            }
            x[i] = sum / l[i * n + i];
        }
        Some(x)
    }

    /// Moore-Penrose solve `A^+ b`, discarding eigenvalues at or below `cutoff`.
    pub fn pinv_solve(&self, b: &[T], cutoff: T) -> Vec<T> {
        let n = self.n;
        let (vals, vecs) = self.eigen();
        let mut x = vec![T::zero(); n];
        for (k, &lam) in vals.iter().enumerate() {
            if lam <= cutoff {
                continue;
            }
            let proj: T = (0..n).map(|i| vecs[i * n + k] * b[i]).sum::<T>() / lam;
            for i in 0..n {
                x[i] += proj * vecs[i * n + k];
            }
        }
        x
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l1_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
}

pub fn l0_distance<T: Scalar>(a: &[T], b: &[T], tol: T) -> usize {
    a.iter().zip(b).filter(|(&x, &y)| (x - y).abs() > tol).count()
}
