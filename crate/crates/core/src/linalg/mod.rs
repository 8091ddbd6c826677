//! Minimal dense linear algebra: row-major matrix storage, deterministic
//! RNG, initializers, vector RMS norm, spectral norm via power iteration,
//! and a small-matrix Jacobi SVD used as the test oracle.
//!
//! Everything is f64. The crate targets desk-scale experiments where
//! numerical headroom matters more than throughput; the tightest invariants
//! downstream (1e-12 column/row normalization, 1e-10 SVD residuals) are not
//! reachable in f32.

mod init;
mod rng;
mod svd;

pub use init::{row_normalized_gaussian_init, semi_orthogonal_init};
pub use rng::{Rng, RNG_ALGORITHM};
pub use svd::{svd_oracle, Svd};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("empty vector has no RMS norm")]
    EmptyVector,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix must be nonzero")]
    ZeroMatrix,
    #[error("power iteration did not converge in {iters} iterations (last estimate {last})")]
    NoConvergence { iters: usize, last: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("batch tensor must have rank 3")]
    NotRank3,
}

/// Dense row-major matrix with shape `(d_out, d_in)` in map convention:
/// rows index the output space, columns the input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix2D::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix2D { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix2D { rows, cols, data }
    }

    pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        Matrix2D { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix2D {
        let mut t = Matrix2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`, sizes `(m,k) x (k,n)`.
    pub fn matmul(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix2D::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`, sizes `(m,k) x (n,k)`.
    pub fn matmul_transpose(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(self.cols, other.cols, "matmul_transpose shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Matrix2D::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a_row[p] * b_row[p];
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    /// `y = self * x` for a dense vector.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec shape mismatch");
        let mut y = vec![0.0; self.rows];
        for (i, out) in y.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *out = acc;
        }
        y
    }

    /// `y = self^T * x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_transpose shape mismatch");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &a) in y.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        y
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix2D {
        let mut m = self.clone();
        m.scale(c);
        m
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Matrix2D, c: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix2D) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense batch of matrices with layout `(experts, d_out, d_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch3D {
    experts: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch3D {
    pub fn zeros(experts: usize, rows: usize, cols: usize) -> Self {
        Batch3D {
            experts,
            rows,
            cols,
            data: vec![0.0; experts * rows * cols],
        }
    }

    pub fn from_slices(slices: &[Matrix2D]) -> Self {
        assert!(!slices.is_empty(), "empty batch");
        let (rows, cols) = (slices[0].rows(), slices[0].cols());
        let mut data = Vec::with_capacity(slices.len() * rows * cols);
        for s in slices {
            assert_eq!((s.rows(), s.cols()), (rows, cols), "ragged batch");
            data.extend_from_slice(s.data());
        }
        Batch3D {
            experts: slices.len(),
            rows,
            cols,
            data,
        }
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, e: usize) -> Matrix2D {
        let n = self.rows * self.cols;
        Matrix2D::from_vec(self.rows, self.cols, self.data[e * n..(e + 1) * n].to_vec())
    }

    pub fn set_slice(&mut self, e: usize, m: &Matrix2D) {
        assert_eq!((m.rows(), m.cols()), (self.rows, self.cols));
        let n = self.rows * self.cols;
        self.data[e * n..(e + 1) * n].copy_from_slice(m.data());
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `‖x‖_RMS = ‖x‖_2 / √d`.
pub fn rms_vector_norm(x: &[f64]) -> Result<f64, LinalgError> {
    if x.is_empty() {
        return Err(LinalgError::EmptyVector);
    }
    Ok(l2_norm(x) / (x.len() as f64).sqrt())
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value via power iteration on `W^T W`.
///
/// The start vector is the normalized all-ones vector so repeated norm logs
/// are reproducible; if that start is annihilated (possible only when the
/// all-ones vector lies in the null space of `W`) the iteration restarts
/// from the basis vector of the largest column.
pub fn spectral_norm(w: &Matrix2D, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    if w.is_empty() || w.data().iter().all(|&v| v == 0.0) {
        return Err(LinalgError::ZeroMatrix);
    }
    let d = w.cols();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut sigma = 0.0f64;
    for it in 0..max_iter {
        let wv = w.matvec(&v);
        let s = l2_norm(&wv);
        if s == 0.0 {
            // Restart from the heaviest column's basis vector.
            let j = (0..d)
                .max_by(|&a, &b| {
                    let ca: f64 = (0..w.rows()).map(|i| w.get(i, a).powi(2)).sum();
                    let cb: f64 = (0..w.rows()).map(|i| w.get(i, b).powi(2)).sum();
                    ca.total_cmp(&cb)
                })
                .unwrap();
            v.iter_mut().for_each(|x| *x = 0.0);
            v[j] = 1.0;
            continue;
        }
        if (s - sigma).abs() <= tol * s {
            return Ok(s);
        }
        sigma = s;
        let mut next = w.matvec_transpose(&wv);
        let n = l2_norm(&next);
        if n == 0.0 {
            return Ok(s);
        }
        next.iter_mut().for_each(|x| *x /= n);
        v = next;
        let _ = it;
    }
    Err(LinalgError::NoConvergence {
        iters: max_iter,
        last: sigma,
    })
}

/// Log-cadence defaults: loose tolerance, generous iteration cap (the
/// spectra of orthogonalized updates cluster near one value, which makes
/// the estimate settle fast but the iterate converge slowly).
pub const SPECTRAL_TOL: f64 = 1e-6;
pub const SPECTRAL_MAX_ITER: usize = 5000;

/// [`spectral_norm`] at the norm-logging defaults.
pub fn spectral_norm_logged(w: &Matrix2D) -> Result<f64, LinalgError> {
    spectral_norm(w, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
}
