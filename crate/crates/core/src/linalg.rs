//! Dense real linear algebra used throughout the crate.
//!
//! Matrices are row-major `f64`. Products go through `matrixmultiply` in
//! fixed row blocks so the result of every entry is independent of how many
//! worker threads participate. Symmetric eigenproblems of moderate size are
//! delegated to `nalgebra`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{QmdaError, Result};

/// Rows of the output handled by one `dgemm` call. Fixed so that the
/// arithmetic per entry never depends on the thread count.
const GEMM_ROW_BLOCK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(QmdaError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(QmdaError::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Mat::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
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

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Scales every nonzero column to unit Euclidean norm.
    pub fn normalize_columns(&mut self) {
        let mut norms = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (n, v) in norms.iter_mut().zip(row) {
                *n += v * v;
            }
        }
        let inv: Vec<f64> = norms.iter().map(|n| if *n > 0.0 { 1.0 / n.sqrt() } else { 1.0 }).collect();
        for row in self.data.chunks_mut(self.cols) {
            for (v, s) in row.iter_mut().zip(&inv) {
                *v *= s;
            }
        }
    }

    /// Keeps the first `k` columns.
    pub fn leading_cols(&self, k: usize) -> Mat {
        Mat::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest |B_ij - B_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replaces `B` with `(B + Bᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        gemm(1.0, self, false, other, false)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        gemm(1.0, self, true, other, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        gemm(1.0, self, false, other, true)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`, accumulated row by row.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            if *xi != 0.0 {
                axpy(*xi, self.row(i), &mut out);
            }
        }
        out
    }

    /// `xᵀ · self · x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent accumulators, combined in a fixed order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
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

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[derive(Clone, Copy)]
struct SendPtr(*const f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

impl SendPtr {
    #[inline]
    fn get(self) -> *const f64 {
        self.0
    }
}

/// `alpha · op(a) · op(b)` where `op` optionally transposes.
pub fn gemm(alpha: f64, a: &Mat, trans_a: bool, b: &Mat, trans_b: bool) -> Mat {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = Mat::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }
    let (rsa, csa) = if trans_a {
        (1isize, a.cols as isize)
    } else {
        (a.cols as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, b.cols as isize)
    } else {
        (b.cols as isize, 1isize)
    };
    let a_ptr = SendPtr(a.data.as_ptr());
    let b_ptr = SendPtr(b.data.as_ptr());
    c.data
        .par_chunks_mut(GEMM_ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, c_chunk)| {
            let row0 = blk * GEMM_ROW_BLOCK;
            let rows = c_chunk.len() / n;
            // SAFETY: strides describe views that lie inside `a`, `b` and the
            // current output chunk, which is exclusively borrowed.
            unsafe {
                let a_off = a_ptr.get().offset(row0 as isize * rsa);
                matrixmultiply::dgemm(
                    rows,
                    k,
                    n,
                    alpha,
                    a_off,
                    rsa,
                    csa,
                    b_ptr.get(),
                    rsb,
                    csb,
                    0.0,
                    c_chunk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    c
}

/// Eigendecomposition of a symmetric matrix. Eigenvalues ascending; column
/// `j` of the returned matrix is the unit eigenvector of eigenvalue `j`.
pub fn sym_eig(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    if !a.is_square() {
        return Err(QmdaError::Eigensolver("matrix is not square".into()));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(QmdaError::Eigensolver("matrix has non-finite entries".into()));
    }
    let n = a.rows;
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let eig = nalgebra::SymmetricEigen::try_new(a.to_nalgebra(), f64::EPSILON, 0)
        .ok_or_else(|| QmdaError::Eigensolver("symmetric QR iteration did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(QmdaError::Eigensolver("matrix is not square".into()));
    }
    let mut v: Vec<f64> = a.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(QmdaError::Eigensolver("non-finite eigenvalue".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> Result<f64> {
    let gram = if a.rows >= a.cols { a.t_matmul(a) } else { a.matmul_t(a) };
    let mut g = gram;
    g.symmetrize();
    let ev = sym_eigenvalues(&g)?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Principal square root of a symmetric positive semidefinite matrix
/// (negative eigenvalues from round-off are clamped to zero).
pub fn sym_sqrt(a: &Mat) -> Result<Mat> {
    let (vals, vecs) = sym_eig(a)?;
    let n = a.rows;
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = vals[j].max(0.0).sqrt();
        for i in 0..n {
            scaled.set(i, j, vecs.get(i, j) * s);
        }
    }
    let mut out = scaled.matmul_t(&vecs);
    out.symmetrize();
    Ok(out)
}

/// Orthonormalizes the columns of a tall matrix with two passes of
/// Cholesky QR, falling back to Householder QR when the block is too
/// ill-conditioned for that.
pub fn orthonormalize(x: &Mat) -> Result<Mat> {
    if let Ok(q) = cholesky_qr_pass(x).and_then(|once| cholesky_qr_pass(&once)) {
        let mut err = q.t_matmul(&q);
        for i in 0..err.rows {
            let v = err.get(i, i) - 1.0;
            err.set(i, i, v);
        }
        if err.max_abs() < 1e-12 {
            return Ok(q);
        }
    }
    householder_q(x)
}

fn householder_q(x: &Mat) -> Result<Mat> {
    if x.cols > x.rows {
        return Err(QmdaError::Eigensolver("block is wider than tall".into()));
    }
    let q = x.to_nalgebra().qr().q();
    Ok(Mat::from_fn(x.rows, x.cols, |i, j| q[(i, j)]))
}

fn cholesky_qr_pass(x: &Mat) -> Result<Mat> {
    let mut gram = x.t_matmul(x);
    gram.symmetrize();
    let k = gram.rows;
    let chol = nalgebra::Cholesky::new(gram.to_nalgebra()).ok_or_else(|| {
        QmdaError::Eigensolver("block lost rank during orthonormalization".into())
    })?;
    // X R^{-1} with R = Lᵀ, computed row by row as solving Lᵀ-systems.
    let l = chol.l();
    let rinv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| QmdaError::Eigensolver("singular Cholesky factor".into()))?;
    let rinv = Mat::from_fn(k, k, |i, j| rinv[(i, j)]);
    Ok(x.matmul(&rinv))
}

/// Deterministic standard-normal matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Mat { rows, cols, data }
}

#[derive(Clone, Debug)]
pub struct SubspaceOptions {
    /// Extra block columns beyond the requested count.
    pub oversample: usize,
    pub max_iter: usize,
    /// Stop once every requested Ritz pair has residual below
    /// `tol · θ_max`.
    pub tol: f64,
    pub seed: u64,
    /// Degree of the Chebyshev filter applied between Rayleigh–Ritz steps.
    /// A degree of 1 gives plain subspace iteration.
    pub filter_degree: usize,
}

impl Default for SubspaceOptions {
    fn default() -> Self {
        SubspaceOptions {
            oversample: 0,
            max_iter: 20,
            tol: 1e-9,
            seed: 0x5eed_0f_b4515,
            filter_degree: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubspaceResult {
    /// Ritz values, descending.
    pub values: Vec<f64>,
    /// Orthonormal Ritz vectors as columns.
    pub vectors: Mat,
    pub iterations: usize,
    pub max_residual: f64,
}

/// Leading `k` eigenpairs of a symmetric positive semidefinite operator of
/// size `n`, by Chebyshev-filtered block subspace iteration with
/// Rayleigh–Ritz projection. The filter damps the interval `[0, θ_b]`, where
/// `θ_b` is the smallest Ritz value of the block.
///
/// `apply` maps an `n × b` block `X` to the block `M X`.
pub fn leading_eigenpairs(
    n: usize,
    k: usize,
    apply: impl Fn(&Mat) -> Mat,
    opts: &SubspaceOptions,
) -> Result<SubspaceResult> {
    if k == 0 || k > n {
        return Err(QmdaError::InvalidParameter(format!(
            "requested {k} eigenpairs of a size-{n} operator"
        )));
    }
    let oversample = if opts.oversample == 0 {
        (k / 5).max(10)
    } else {
        opts.oversample
    };
    let b = (k + oversample).min(n);
    let mut z = apply(&gaussian_matrix(n, b, opts.seed));
    let mut values = Vec::new();
    let mut vectors = Mat::zeros(n, b);
    let mut max_residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let x = orthonormalize(&z)?;
        let w = apply(&x);
        let mut t = x.t_matmul(&w);
        t.symmetrize();
        let (theta, v) = sym_eig(&t)?;
        // descending order
        let v_desc = Mat::from_fn(b, b, |i, j| v.get(i, b - 1 - j));
        let theta_desc: Vec<f64> = theta.iter().rev().copied().collect();
        vectors = x.matmul(&v_desc);
        let pv = w.matmul(&v_desc);
        let scale = theta_desc[0].abs().max(f64::MIN_POSITIVE);
        max_residual = (0..k)
            .map(|j| {
                let r: f64 = (0..n)
                    .map(|i| {
                        let d = pv.get(i, j) - theta_desc[j] * vectors.get(i, j);
                        d * d
                    })
                    .sum();
                r.sqrt() / scale
            })
            .fold(0.0, f64::max);
        let cut = theta_desc[b - 1];
        values = theta_desc;
        if max_residual <= opts.tol || iterations == opts.max_iter {
            break;
        }
        z = if opts.filter_degree > 1 && cut > 0.0 && cut < values[0] {
            let mut y = chebyshev_filter(&vectors, pv, cut, opts.filter_degree, &apply);
            y.normalize_columns();
            y
        } else {
            pv
        };
    }
    values.truncate(k);
    Ok(SubspaceResult {
        values,
        vectors: vectors.leading_cols(k),
        iterations,
        max_residual,
    })
}

/// `T_m((2M − c)/c) X` by the three-term recurrence, given `MX`.
fn chebyshev_filter(x: &Mat, mx: Mat, cut: f64, degree: usize, apply: &impl Fn(&Mat) -> Mat) -> Mat {
    let half = cut / 2.0;
    let step = |my: &Mat, y: &Mat| {
        let mut out = my.clone();
        for (o, v) in out.data.iter_mut().zip(&y.data) {
            *o = (*o - half * v) / half;
        }
        out
    };
    let mut prev = x.clone();
    let mut cur = step(&mx, x);
    for _ in 1..degree {
        let mut next = step(&apply(&cur), &cur);
        for (n, p) in next.data.iter_mut().zip(&prev.data) {
            *n = 2.0 * *n - p;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    cur
}
