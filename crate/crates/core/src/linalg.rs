//! Dense row-major matrices and SPD factorisation.
//!
//! Everything here is `f64`. The Cholesky factor is stored as a full
//! row-major lower-triangular matrix so that solves and the inverse-factor
//! trace can walk contiguous rows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite: pivot {pivot} failed after jitter {jitter:.3e}")]
    NotPositiveDefinite { pivot: usize, jitter: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: k / cols.max(1), col: k % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    /// Wraps a buffer without checking finiteness.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { rows: rows.len(), cols, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            1.0,
            MatRef::normal(self),
            MatRef::normal(other),
            0.0,
            &mut out,
        );
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.cols);
        gemm(1.0, MatRef::transposed(self), MatRef::normal(self), 0.0, &mut out);
        out
    }

    /// `self · selfᵀ`.
    pub fn outer_gram(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.rows);
        gemm(1.0, MatRef::normal(self), MatRef::transposed(self), 0.0, &mut out);
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "matvec: {}x{} against length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "transposed matvec: {}x{} against length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Largest entrywise asymmetry relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn add_diagonal(&mut self, v: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.rows.min(self.cols);
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|i| self.get(i, i)).sum::<f64>() / n as f64
    }
}

#[derive(Clone, Copy)]
struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> MatRef<'a> {
    fn normal(m: &'a DenseMatrix) -> Self {
        Self { data: &m.data, rows: m.rows, cols: m.cols, row_stride: m.cols as isize, col_stride: 1 }
    }

    fn transposed(m: &'a DenseMatrix) -> Self {
        Self { data: &m.data, rows: m.cols, cols: m.rows, row_stride: 1, col_stride: m.cols as isize }
    }
}

/// `c ← alpha·a·b + beta·c`.
fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut DenseMatrix) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((a.rows, b.cols), (c.rows, c.cols));
    if c.data.is_empty() {
        return;
    }
    if a.cols == 0 {
        c.scale(beta);
        return;
    }
    // SAFETY: the strides describe in-bounds views of the borrowed slices and
    // `c` is exclusively borrowed, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    norm_sq(x).sqrt()
}

/// Relative jitter ladder tried after the caller's own jitter fails.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

const BLOCK: usize = 64;

/// Cholesky factor `L Lᵀ = A + jitter·I` of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactor {
    dim: usize,
    lower: DenseMatrix,
    log_det: f64,
    jitter: f64,
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower_factor(&self) -> &DenseMatrix {
        &self.lower
    }

    /// `log det(A + jitter·I)`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Total diagonal shift that was needed for the factorisation to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.dim, self.dim);
        gemm(
            1.0,
            MatRef::normal(&self.lower),
            MatRef::transposed(&self.lower),
            0.0,
            &mut out,
        );
        out
    }

    /// Solves `L z = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = self.lower.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn backward_substitute(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let xi = b[i] / self.lower.get(i, i);
            b[i] = xi;
            // Column i of Lᵀ is row i of L: eliminate x_i from earlier equations.
            axpy(-xi, &self.lower.row(i)[..i], &mut b[..i]);
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(LinalgError::DimensionMismatch(format!(
                "solve: factor of dim {} against length {}",
                self.dim,
                b.len()
            )));
        }
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        Ok(x)
    }

    /// `L⁻¹`, lower triangular.
    pub fn inverse_lower(&self) -> DenseMatrix {
        let n = self.dim;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut acc = vec![0.0; n];
        for i in 0..n {
            let lrow = self.lower.row(i);
            acc[..i].iter_mut().for_each(|v| *v = 0.0);
            // Row i of X = L⁻¹ satisfies Σ_k L[i][k] X[k] = e_i.
            for (k, &lik) in lrow[..i].iter().enumerate() {
                if lik != 0.0 {
                    axpy(-lik, &inv.row(k)[..=k], &mut acc[..=k]);
                }
            }
            let d = lrow[i];
            let out = inv.row_mut(i);
            for j in 0..i {
                out[j] = acc[j] / d;
            }
            out[i] = 1.0 / d;
        }
        inv
    }
}

/// Factors `m + jitter·I`, escalating through [`JITTER_LADDER`] (relative to
/// the mean diagonal) before giving up.
pub fn cholesky(m: &DenseMatrix, jitter: f64) -> Result<SpdFactor> {
    if !m.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "cholesky of a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(LinalgError::DimensionMismatch(format!("invalid jitter {jitter}")));
    }
    if let Some(k) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { row: k / m.cols, col: k % m.cols });
    }
    let asym = m.asymmetry();
    if asym > 1e-8 {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let scale = m.mean_diagonal().abs().max(f64::MIN_POSITIVE);
    let mut last_pivot = 0;
    let attempts = std::iter::once(jitter).chain(JITTER_LADDER.iter().map(|r| jitter + r * scale));
    let mut tried = jitter;
    for j in attempts {
        tried = j;
        let mut a = m.clone();
        a.add_diagonal(j);
        match factor_in_place(&mut a.data, a.rows) {
            Ok(()) => {
                let log_det = 2.0 * (0..a.rows).map(|i| a.get(i, i).ln()).sum::<f64>();
                return Ok(SpdFactor { dim: a.rows, lower: a, log_det, jitter: j });
            }
            Err(p) => last_pivot = p,
        }
    }
    Err(LinalgError::NotPositiveDefinite { pivot: last_pivot, jitter: tried })
}

/// Blocked right-looking Cholesky on a row-major square buffer. Leaves `L` in
/// the lower triangle and zeros above it. Returns the failing pivot index.
fn factor_in_place(a: &mut [f64], n: usize) -> std::result::Result<(), usize> {
    let mut k = 0;
    while k < n {
        let b = BLOCK.min(n - k);
        // Diagonal block.
        for j in k..k + b {
            let rowj = &a[j * n..(j + 1) * n];
            let s = rowj[j] - dot(&rowj[k..j], &rowj[k..j]);
            if !(s > 0.0 && s.is_finite()) {
                return Err(j);
            }
            let d = s.sqrt();
            a[j * n + j] = d;
            for i in j + 1..k + b {
                let (lo, hi) = a.split_at_mut(i * n);
                let rj = &lo[j * n + k..j * n + j];
                let ri = &mut hi[..n];
                ri[j] = (ri[j] - dot(&ri[k..j], rj)) / d;
            }
        }
        // Panel below the diagonal block: L21 · L11ᵀ = A21.
        if k + b < n {
            let (top, bottom) = a.split_at_mut((k + b) * n);
            for row in bottom.chunks_exact_mut(n) {
                for j in k..k + b {
                    let rj = &top[j * n + k..j * n + j];
                    let s = row[j] - dot(&row[k..j], rj);
                    row[j] = s / top[j * n + j];
                }
            }
            // Trailing update: A22 ← A22 − L21 L21ᵀ.
            let m = n - k - b;
            let ptr = bottom.as_mut_ptr();
            // SAFETY: L21 occupies columns k..k+b and the trailing block
            // columns k+b..n of the same rows, so the read and write regions
            // are disjoint; every offset stays inside `bottom`.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    b,
                    m,
                    -1.0,
                    ptr.add(k) as *const f64,
                    n as isize,
                    1,
                    ptr.add(k) as *const f64,
                    1,
                    n as isize,
                    1.0,
                    ptr.add(k + b),
                    n as isize,
                    1,
                );
            }
        }
        k += b;
    }
    for i in 0..n {
        a[i * n + i + 1..(i + 1) * n].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

/// Solves `A X = B` column by column.
pub fn solve(f: &SpdFactor, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows != f.dim {
        return Err(LinalgError::DimensionMismatch(format!(
            "solve: factor of dim {} against {}x{} right-hand side",
            f.dim, b.rows, b.cols
        )));
    }
    let mut out = DenseMatrix::zeros(b.rows, b.cols);
    let mut col = vec![0.0; b.rows];
    for j in 0..b.cols {
        for i in 0..b.rows {
            col[i] = b.get(i, j);
        }
        f.forward_substitute(&mut col);
        f.backward_substitute(&mut col);
        for i in 0..b.rows {
            out.set(i, j, col[i]);
        }
    }
    Ok(out)
}

/// `Tr(A⁻¹) = ‖L⁻¹‖²_F`.
pub fn trace_inverse(f: &SpdFactor) -> f64 {
    norm_sq(f.inverse_lower().as_slice())
}
