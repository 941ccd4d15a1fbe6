//! Orthonormal data-driven basis from the leading left singular vectors of
//! the factorized bistochastic kernel matrix.

use serde::{Deserialize, Serialize};

use crate::error::{QmdaError, Result};
use crate::kernels::{
    bistochastic_in_place, knn_bandwidth_with, self_sq_dists, tune_bandwidth, vb_gaussian_in_place,
    DenseSq, KernelParams, ScaledSq, Shape, TuningResult,
};
use crate::linalg::{gemm, leading_eigenpairs, sym_eig, Mat, SubspaceOptions};

/// Relative singular value gap below which columns count as degenerate.
const CLUSTER_GAP: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisParams {
    pub l: usize,
    /// Singular values below `min_sigma · σ_0` make the basis rank deficient.
    pub min_sigma: f64,
    /// Largest `N` for which the Gram matrix is formed and diagonalized
    /// densely; above it subspace iteration is used.
    pub dense_limit: usize,
    pub max_iter: usize,
    /// Residual tolerance of subspace iteration, relative to `σ_0²`.
    pub tol: f64,
    /// Extra subspace columns; zero picks a default.
    pub oversample: usize,
    /// Chebyshev filter degree per subspace iteration; 1 disables filtering.
    pub filter_degree: usize,
    pub seed: u64,
}

impl Default for BasisParams {
    fn default() -> Self {
        BasisParams {
            l: 1000,
            min_sigma: 1e-12,
            dense_limit: 2000,
            max_iter: 20,
            tol: 1e-9,
            oversample: 0,
            filter_degree: 8,
            seed: 20240917,
        }
    }
}

/// Summary of the kernel construction, kept alongside the basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDiagnostics {
    pub bandwidth_tuning: TuningResult,
    pub kernel_tuning: TuningResult,
    pub solver: String,
    pub iterations: usize,
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBasis {
    /// `N × L`, column `l` is `φ_l` at the training points, `‖φ_l‖ = √N`.
    phi: Mat,
    sigma: Vec<f64>,
}

impl KernelBasis {
    pub fn new(phi: Mat, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != phi.cols() {
            return Err(QmdaError::DimensionMismatch(format!(
                "{} singular values for {} basis vectors",
                sigma.len(),
                phi.cols()
            )));
        }
        if phi.rows() == 0 || phi.cols() == 0 {
            return Err(QmdaError::Empty("basis has no vectors".into()));
        }
        Ok(KernelBasis { phi, sigma })
    }

    pub fn phi(&self) -> &Mat {
        &self.phi
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Number of training points.
    pub fn n(&self) -> usize {
        self.phi.rows()
    }

    pub fn l(&self) -> usize {
        self.phi.cols()
    }

    /// `(1/N) Φᵀ Φ`, the identity up to round-off.
    pub fn gram(&self) -> Mat {
        gemm(1.0 / self.n() as f64, &self.phi, true, &self.phi, false)
    }

    /// Keeps the leading `l` vectors.
    pub fn truncate(&self, l: usize) -> Result<KernelBasis> {
        if l == 0 || l > self.l() {
            return Err(QmdaError::InvalidParameter(format!(
                "cannot truncate a basis of {} vectors to {l}",
                self.l()
            )));
        }
        KernelBasis::new(self.phi.leading_cols(l), self.sigma[..l].to_vec())
    }
}

/// Builds the kernel on the rows of `z` and returns its leading `L` basis
/// vectors together with tuning diagnostics.
pub fn compute_basis(
    z: &Mat,
    kernel: &KernelParams,
    params: &BasisParams,
) -> Result<(KernelBasis, BasisDiagnostics)> {
    kernel.validate()?;
    let n = z.rows();
    if params.l == 0 {
        return Err(QmdaError::InvalidParameter("L must be positive".into()));
    }
    if params.l > n {
        return Err(QmdaError::InvalidParameter(format!(
            "L = {} exceeds the number of samples {n}",
            params.l
        )));
    }
    let mut buf = self_sq_dists(z);
    let bw = knn_bandwidth_with(z, &DenseSq(&buf), kernel)?;
    let b = bw.length_scales();
    let kernel_tuning = tune_bandwidth(
        &ScaledSq {
            inner: &DenseSq(&buf),
            scale: &b,
        },
        &Shape::Gaussian,
        kernel,
    )?;
    vb_gaussian_in_place(&mut buf, &b, kernel_tuning.epsilon_star)?;
    bistochastic_in_place(&mut buf)?;
    let (basis, solver, iterations, max_residual) = factor_basis(&buf, params)?;
    Ok((
        basis,
        BasisDiagnostics {
            bandwidth_tuning: bw.tuning().clone(),
            kernel_tuning,
            solver,
            iterations,
            max_residual,
        },
    ))
}

/// Leading left singular vectors of a square factor matrix `K̂`.
pub fn factor_basis(khat: &Mat, params: &BasisParams) -> Result<(KernelBasis, String, usize, f64)> {
    let n = khat.rows();
    let l = params.l;
    if l == 0 || l > n {
        return Err(QmdaError::InvalidParameter(format!(
            "L = {l} with {n} samples"
        )));
    }
    let (values, vectors, solver, iterations, residual) = if n <= params.dense_limit {
        let mut g = gemm(1.0, khat, false, khat, true);
        g.symmetrize();
        let (vals, vecs) = sym_eig(&g)?;
        let values: Vec<f64> = (0..l).map(|j| vals[n - 1 - j]).collect();
        let vectors = Mat::from_fn(n, l, |i, j| vecs.get(i, n - 1 - j));
        (values, vectors, "dense".to_string(), 1, 0.0)
    } else {
        let opts = SubspaceOptions {
            oversample: params.oversample,
            max_iter: params.max_iter,
            tol: params.tol,
            seed: params.seed,
            filter_degree: params.filter_degree,
        };
        let apply = |x: &Mat| {
            let t = gemm(1.0, khat, true, x, false);
            gemm(1.0, khat, false, &t, false)
        };
        let res = leading_eigenpairs(n, l, apply, &opts)?;
        (res.values, res.vectors, "subspace".to_string(), res.iterations, res.max_residual)
    };

    let sigma: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    // ‖K̂ᵀ v‖ resolves small singular values far better than √λ
    let direct = gemm(1.0, khat, true, &vectors, false);
    let threshold = params.min_sigma * sigma[0];
    for j in 0..l {
        let col_norm = (0..n).map(|i| direct.get(i, j).powi(2)).sum::<f64>().sqrt();
        let s = sigma[j].min(col_norm);
        if !(s > threshold) {
            return Err(QmdaError::RankDeficient {
                index: j,
                value: s,
                threshold,
            });
        }
    }
    let mut phi = vectors;
    phi.scale((n as f64).sqrt());
    fix_signs(&mut phi);
    order_clusters(&mut phi, &sigma);
    Ok((KernelBasis::new(phi, sigma)?, solver, iterations, residual))
}

/// Makes every column mean non-negative; columns with vanishing mean get a
/// positive first significant entry instead.
pub fn fix_signs(phi: &mut Mat) {
    let (n, l) = (phi.rows(), phi.cols());
    for j in 0..l {
        let col = phi.col(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let rms = (col.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let flip = if mean.abs() > 1e-10 * rms {
            mean < 0.0
        } else {
            col.iter()
                .find(|v| v.abs() > 1e-8 * rms)
                .is_some_and(|v| *v < 0.0)
        };
        if flip {
            let neg: Vec<f64> = col.iter().map(|v| -v).collect();
            phi.set_col(j, &neg);
        }
    }
}

/// Within runs of numerically equal singular values, orders columns
/// lexicographically, largest first.
fn order_clusters(phi: &mut Mat, sigma: &[f64]) {
    let l = sigma.len();
    let mut start = 0;
    while start < l {
        let mut end = start + 1;
        while end < l && (sigma[end - 1] - sigma[end]).abs() <= CLUSTER_GAP * sigma[start] {
            end += 1;
        }
        if end - start > 1 {
            let mut cols: Vec<Vec<f64>> = (start..end).map(|j| phi.col(j)).collect();
            cols.sort_by(|a, b| {
                for (x, y) in a.iter().zip(b) {
                    match y.total_cmp(x) {
                        std::cmp::Ordering::Equal => continue,
                        o => return o,
                    }
                }
                std::cmp::Ordering::Equal
            });
            for (k, c) in cols.iter().enumerate() {
                phi.set_col(start + k, c);
            }
        }
        start = end;
    }
}
