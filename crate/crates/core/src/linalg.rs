//! Small dense matrices for Jacobians in dimension at most three.

use nalgebra::DMatrix;

use crate::fields::MAX_DIM;

/// Row-major `n x n` matrix with fixed inline storage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat {
    pub n: usize,
    a: [f64; MAX_DIM * MAX_DIM],
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= MAX_DIM, "dimension {n} exceeds {MAX_DIM}");
        Self {
            n,
            a: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n * n);
        let mut m = Self::zeros(n);
        m.a[..n * n].copy_from_slice(data);
        m
    }

    /// Matrix with entries `f(i, j)`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a[..self.n * self.n]
    }

    pub fn column(&self, j: usize) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for (i, ci) in c.iter_mut().enumerate().take(self.n) {
            *ci = self.get(i, j);
        }
        c
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        let n = self.n;
        Self::from_fn(n, |i, j| (0..n).map(|l| self.get(i, l) * other.get(l, j)).sum())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn add_scaled(&self, s: f64, other: &Mat) -> Mat {
        let mut m = *self;
        for (x, y) in m.a.iter_mut().zip(&other.a) {
            *x += s * y;
        }
        m
    }

    pub fn det(&self) -> f64 {
        let g = |i, j| self.get(i, j);
        match self.n {
            0 => 1.0,
            1 => g(0, 0),
            2 => g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0),
            _ => {
                g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
                    - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
                    + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
            }
        }
    }

    pub fn inverse(&self) -> Option<Mat> {
        let inv = DMatrix::from_row_slice(self.n, self.n, self.as_slice()).try_inverse()?;
        let m = Self::from_fn(self.n, |i, j| inv[(i, j)]);
        m.is_finite().then_some(m)
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    /// Max-norm distance to another matrix.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}
