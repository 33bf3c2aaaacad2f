//! Small dense matrices and vectors for n = 2, 3.
//!
//! Every cell of a [`MatrixField`](crate::fields::MatrixField) carries one
//! [`Mat`], so these are `Copy` and stack allocated. Entries are stored
//! row-major with a fixed stride of 3; unused slots stay zero.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// An n×n real matrix with n ∈ {2, 3}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Mat {
    n: usize,
    a: [f64; 9],
}

/// An n-vector with n ∈ {2, 3}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Vector {
    n: usize,
    v: [f64; 3],
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!(n == 2 || n == 3, "matrix dimension must be 2 or 3, got {n}");
        Mat { n, a: [0.0; 9] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Builds a matrix from row-major entries (length n²).
    pub fn from_rows(n: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), n * n);
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = entries[i * n + j];
            }
        }
        m
    }

    /// 2D rotation by `theta` (counter-clockwise).
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat::from_rows(2, &[c, -s, s, c])
    }

    /// Outer product a ⊗ b.
    pub fn outer(a: &Vector, b: &Vector) -> Self {
        let n = a.dim();
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = a[i] * b[j];
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major entries, length n².
    pub fn entries(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self[(j, i)];
            }
        }
        m
    }

    /// Symmetric part (A + Aᵀ)/2.
    pub fn sym(&self) -> Self {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = 0.5 * (self[(i, j)] + self[(j, i)]);
            }
        }
        m
    }

    /// Skew part (A − Aᵀ)/2.
    pub fn skew(&self) -> Self {
        let mut m = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = 0.5 * (self[(i, j)] - self[(j, i)]);
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        if self.n == 2 {
            a[0] * a[4] - a[1] * a[3]
        } else {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum()
    }

    /// Frobenius inner product A : B.
    pub fn dot(&self, other: &Mat) -> f64 {
        self.a.iter().zip(other.a.iter()).map(|(x, y)| x * y).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.a.iter_mut().for_each(|x| *x *= s);
        m
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.n);
        for i in 0..self.n {
            out[i] = (0..self.n).map(|j| self[(i, j)] * v[j]).sum();
        }
        out
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vector {
        let mut out = Vector::zeros(self.n);
        for i in 0..self.n {
            out[i] = self[(i, j)];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|x| x.is_finite())
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.a.iter().zip(other.a.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub(crate) fn to_na3(self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_row_slice(&self.a)
    }

    pub(crate) fn from_na3(m: &nalgebra::Matrix3<f64>) -> Self {
        let mut out = Mat::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    pub(crate) fn to_na2(self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::new(self.a[0], self.a[1], self.a[3], self.a[4])
    }

    pub(crate) fn from_na2(m: &nalgebra::Matrix2<f64>) -> Self {
        Mat::from_rows(2, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.n && j < self.n);
        &self.a[i * 3 + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.n && j < self.n);
        &mut self.a[i * 3 + j]
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(mut self, rhs: Mat) -> Mat {
        self += rhs;
        self
    }
}

impl AddAssign for Mat {
    fn add_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        self.a.iter_mut().zip(rhs.a.iter()).for_each(|(x, y)| *x += y);
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(mut self, rhs: Mat) -> Mat {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat {
    fn sub_assign(&mut self, rhs: Mat) {
        debug_assert_eq!(self.n, rhs.n);
        self.a.iter_mut().zip(rhs.a.iter()).for_each(|(x, y)| *x -= y);
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        let n = self.n;
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = (0..n).map(|k| self[(i, k)] * rhs[(k, j)]).sum();
            }
        }
        m
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        (0..m.n).map(|i| (0..m.n).map(|j| m[(i, j)]).collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let n = rows.len();
        if !(n == 2 || n == 3) || rows.iter().any(|r| r.len() != n) {
            return Err(format!("expected a square 2x2 or 3x3 matrix, got {n} rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Mat::from_rows(n, &flat))
    }
}

impl Vector {
    pub fn zeros(n: usize) -> Self {
        assert!(n == 2 || n == 3, "vector dimension must be 2 or 3, got {n}");
        Vector { n, v: [0.0; 3] }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let mut out = Vector::zeros(v.len());
        out.v[..v.len()].copy_from_slice(v);
        out
    }

    /// Unit vector e_k.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut out = Vector::zeros(n);
        out[k] = 1.0;
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v[..self.n]
    }

    pub fn norm(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.v.iter().zip(other.v.iter()).map(|(x, y)| x * y).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.v.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|x| x.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        debug_assert!(i < self.n);
        &self.v[i]
    }
}

impl IndexMut<usize> for Vector {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        debug_assert!(i < self.n);
        &mut self.v[i]
    }
}

impl Add for Vector {
    type Output = Vector;
    fn add(mut self, rhs: Vector) -> Vector {
        self.v.iter_mut().zip(rhs.v.iter()).for_each(|(x, y)| *x += y);
        self
    }
}

impl Sub for Vector {
    type Output = Vector;
    fn sub(mut self, rhs: Vector) -> Vector {
        self.v.iter_mut().zip(rhs.v.iter()).for_each(|(x, y)| *x -= y);
        self
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.as_slice().to_vec()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = String;
    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        if !(v.len() == 2 || v.len() == 3) {
            return Err(format!("expected a 2- or 3-vector, got length {}", v.len()));
        }
        Ok(Vector::from_slice(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_transpose() {
        let a = Mat::from_rows(3, &[1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 5.0, 6.0, 0.0]);
        assert_eq!(a.det(), 1.0);
        assert_eq!(a.transpose().det(), 1.0);
        assert_eq!(a.sym() + a.skew(), a);
    }

    #[test]
    fn serde_roundtrip() {
        let a = Mat::from_rows(2, &[1.0, -0.5, 0.25, 3.0]);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, "[[1.0,-0.5],[0.25,3.0]]");
        let b: Mat = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }
}
