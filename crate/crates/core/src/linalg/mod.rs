//! Dense row-major matrices and the factorizations the rest of the crate
//! builds on.

mod cholesky;
mod eig;
mod qr;
mod svd;

pub use cholesky::{cholesky, solve_lower};
pub use eig::{sym_eig, SymEig};
pub use qr::qr_thin;
pub use svd::{svd, SvdResult, SVD_MAX_SWEEPS, SVD_TOLERANCE};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};

/// Symmetry tolerance used by factorizations that require symmetric input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Dense real matrix, row-major, with strictly positive dimensions.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("{rows}x{cols} has a zero dimension")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; panics on ragged input. Mostly for tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::from_vec(rows.len(), cols, data).expect("non-empty rows")
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// A 1 x n row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec()).expect("non-empty vector")
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        out.scale_in_place(s);
        out
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        axpy_slice(&mut self.data, alpha, &other.data);
        Ok(())
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm_nt(self, other, &mut out, 1.0, 0.0);
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "matmul_tn",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm_tn(self, other, &mut out, 1.0, 0.0);
        Ok(out)
    }

    /// Largest entrywise asymmetry `max |a_ij - a_ji|`; `None` if not square.
    pub fn asymmetry(&self) -> Option<f64> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }

    /// Errors unless the matrix is square and symmetric within
    /// [`SYMMETRY_TOLERANCE`] (relative to its largest entry when that exceeds 1).
    pub fn check_symmetric(&self) -> Result<()> {
        let asym = self.asymmetry().ok_or(Error::Dimension {
            op: "symmetry check",
            lhs: self.shape(),
            rhs: (self.cols, self.rows),
        })?;
        let scale = self.max_abs().max(1.0);
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm_nn(a, b, &mut out, 1.0, 0.0);
    Ok(out)
}

/// `√(Σ mᵢⱼ²)`, computed with scaling so that tiny or huge entries neither
/// underflow nor overflow.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    let scale = m.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let inv = 1.0 / scale;
    let ss: f64 = m.data.iter().map(|v| (v * inv) * (v * inv)).sum();
    scale * ss.sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy_slice(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const MR: usize = 4;
const NR: usize = 4;

/// `out = alpha · a · b + beta · out` for row-major `a` (`m x k`) and `b`
/// (`k x n`), accumulating `MR x NR` output tiles in registers. Each output
/// entry is summed over `k` in increasing order.
fn gemm_kernel(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], out: &mut [f64], alpha: f64, beta: f64) {
    let store = |o: &mut f64, acc: f64| {
        *o = if beta == 0.0 { alpha * acc } else { alpha * acc + beta * *o };
    };
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if mr == MR && nr == NR {
                let mut acc = [[0.0f64; NR]; MR];
                let (a0, a1, a2, a3) = (
                    &a[i0 * k..(i0 + 1) * k],
                    &a[(i0 + 1) * k..(i0 + 2) * k],
                    &a[(i0 + 2) * k..(i0 + 3) * k],
                    &a[(i0 + 3) * k..(i0 + 4) * k],
                );
                for (p, brow) in b.chunks_exact(n).enumerate().take(k) {
                    let bv: &[f64; NR] = brow[j0..j0 + NR].try_into().expect("tile");
                    let av = [a0[p], a1[p], a2[p], a3[p]];
                    for r in 0..MR {
                        for c in 0..NR {
                            acc[r][c] += av[r] * bv[c];
                        }
                    }
                }
                for r in 0..MR {
                    let orow = &mut out[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
                    for c in 0..NR {
                        store(&mut orow[c], acc[r][c]);
                    }
                }
            } else {
                for r in 0..mr {
                    let arow = &a[(i0 + r) * k..(i0 + r + 1) * k];
                    for c in 0..nr {
                        let mut acc = 0.0;
                        for (p, &av) in arow.iter().enumerate() {
                            acc += av * b[p * n + j0 + c];
                        }
                        store(&mut out[(i0 + r) * n + j0 + c], acc);
                    }
                }
            }
            j0 += NR;
        }
        i0 += MR;
    }
}

/// `out = alpha · a · b + beta · out`. Shapes are the caller's responsibility.
pub(crate) fn gemm_nn(a: &Matrix, b: &Matrix, out: &mut Matrix, alpha: f64, beta: f64) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!(out.shape(), (a.rows, b.cols));
    gemm_kernel(a.rows, b.cols, a.cols, &a.data, &b.data, &mut out.data, alpha, beta);
}

/// `out = alpha · a · bᵀ + beta · out`.
pub(crate) fn gemm_nt(a: &Matrix, b: &Matrix, out: &mut Matrix, alpha: f64, beta: f64) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!(out.shape(), (a.rows, b.rows));
    let bt = b.transpose();
    gemm_kernel(a.rows, b.rows, a.cols, &a.data, &bt.data, &mut out.data, alpha, beta);
}

/// `out = alpha · aᵀ · b + beta · out`.
pub(crate) fn gemm_tn(a: &Matrix, b: &Matrix, out: &mut Matrix, alpha: f64, beta: f64) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(out.shape(), (a.cols, b.cols));
    let at = a.transpose();
    gemm_kernel(a.cols, b.cols, a.rows, &at.data, &b.data, &mut out.data, alpha, beta);
}

/// Flip signs so that the largest-magnitude entry (first one on ties) is
/// non-negative. Returns whether a flip happened.
pub(crate) fn canonical_sign(v: &[f64]) -> bool {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    !v.is_empty() && v[best] < 0.0
}
