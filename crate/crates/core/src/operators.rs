//! Matrix representations in the kernel basis: shift (Koopman) matrices,
//! the multiplication operator of the forecast observable with its spectral
//! projectors, quantile bins, and the effect-valued observation map.

use serde::{Deserialize, Serialize};

use crate::basis::KernelBasis;
use crate::error::{QmdaError, Result};
use crate::kernels::{
    bump_sq, knn_bandwidth, sq_dist, tune_bandwidth, BandwidthFunction, KernelParams, PointSq,
    ScaledSq, Shape, TuningResult,
};
use crate::linalg::{gemm, sym_eig, sym_sqrt, Mat};

/// `U^(q)` with `U_ij = (1/N) φ_iᵀ φ_j^(q)`, `φ^(q)(n) = φ((n+q) mod N)`.
///
/// `q = 0` is the identity by orthonormality and is returned as such;
/// negative shifts are the transposes of the positive ones.
pub fn koopman_matrix(basis: &KernelBasis, q: i64) -> Result<Mat> {
    let n = basis.n();
    if q.unsigned_abs() as usize >= n {
        return Err(QmdaError::InvalidParameter(format!(
            "shift {q} is not smaller than N = {n}"
        )));
    }
    if q == 0 {
        return Ok(Mat::identity(basis.l()));
    }
    if q < 0 {
        return Ok(koopman_matrix(basis, -q)?.transpose());
    }
    let q = q as usize;
    let phi = basis.phi();
    let l = basis.l();
    let mut shifted = Mat::zeros(n, l);
    for i in 0..n {
        shifted.row_mut(i).copy_from_slice(phi.row((i + q) % n));
    }
    Ok(gemm(1.0 / n as f64, phi, true, &shifted, false))
}

/// Shift matrices for `q = 0..=j_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanSet {
    mats: Vec<Mat>,
}

impl KoopmanSet {
    pub fn compute(basis: &KernelBasis, j_max: usize) -> Result<Self> {
        let mats = (0..=j_max)
            .map(|q| koopman_matrix(basis, q as i64))
            .collect::<Result<Vec<_>>>()?;
        Ok(KoopmanSet { mats })
    }

    pub fn from_matrices(mats: Vec<Mat>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(QmdaError::Empty("no shift matrices".into()));
        };
        let l = first.rows();
        if mats.iter().any(|m| m.rows() != l || m.cols() != l) {
            return Err(QmdaError::DimensionMismatch(
                "shift matrices differ in size".into(),
            ));
        }
        Ok(KoopmanSet { mats })
    }

    pub fn j_max(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn l(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn get(&self, q: usize) -> Result<&Mat> {
        self.mats.get(q).ok_or_else(|| {
            QmdaError::InvalidParameter(format!(
                "lead {q} beyond stored maximum {}",
                self.j_max()
            ))
        })
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.mats
    }
}

/// `A_ij = (1/N) φ_iᵀ (f ⊙ φ_j)`, symmetrized.
pub fn multiplication_operator(basis: &KernelBasis, f: &[f64]) -> Result<Mat> {
    let n = basis.n();
    if f.len() != n {
        return Err(QmdaError::DimensionMismatch(format!(
            "{} observable samples for {n} basis points",
            f.len()
        )));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(QmdaError::NonFinite { row: i });
    }
    Ok(weighted_gram(basis.phi(), f, n))
}

/// `(1/n) Φᵀ diag(w) Φ`, symmetrized.
fn weighted_gram(phi: &Mat, w: &[f64], n: usize) -> Mat {
    let l = phi.cols();
    let mut weighted = phi.clone();
    for (i, &wi) in w.iter().enumerate() {
        for v in weighted.row_mut(i) {
            *v *= wi;
        }
    }
    let mut a = gemm(1.0 / n as f64, phi, true, &weighted, false);
    debug_assert_eq!(a.rows(), l);
    a.symmetrize();
    a
}

/// Quantile bins of a scalar observable.
///
/// With interior boundaries `Q_1 < … < Q_{M-1}`, bin `0` is `(-∞, Q_1]`,
/// bin `m` is `(Q_m, Q_{m+1}]`, and bin `M-1` is `(Q_{M-1}, ∞)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBins {
    boundaries: Vec<f64>,
}

impl SpectralBins {
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(QmdaError::InvalidParameter("non-finite bin boundary".into()));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(QmdaError::InvalidParameter(
                "bin boundaries are not strictly increasing".into(),
            ));
        }
        Ok(SpectralBins { boundaries })
    }

    pub fn m(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn bin_of(&self, x: f64) -> usize {
        self.boundaries.partition_point(|&b| b < x)
    }

    /// Lower and upper end of bin `m`, infinite at the edges.
    pub fn interval(&self, m: usize) -> (f64, f64) {
        let lo = if m == 0 {
            f64::NEG_INFINITY
        } else {
            self.boundaries[m - 1]
        };
        let hi = if m + 1 == self.m() {
            f64::INFINITY
        } else {
            self.boundaries[m]
        };
        (lo, hi)
    }

    /// Length of bin `m`; `None` for unbounded bins.
    pub fn width(&self, m: usize) -> Option<f64> {
        let (lo, hi) = self.interval(m);
        (lo.is_finite() && hi.is_finite()).then(|| hi - lo)
    }
}

/// Empirical quantile `Q(p) = x_(⌈pN⌉)` (1-based order statistic) at
/// `p = m/M`, returned as `(m·N + M - 1) / M` in integer arithmetic.
fn order_index(m: usize, bins: usize, n: usize) -> usize {
    (m * n).div_ceil(bins).max(1)
}

pub fn spectral_bins(f: &[f64], m: usize) -> Result<SpectralBins> {
    if m == 0 {
        return Err(QmdaError::InvalidParameter("bin count must be positive".into()));
    }
    if f.is_empty() {
        return Err(QmdaError::Empty("no samples for quantiles".into()));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(QmdaError::NonFinite { row: i });
    }
    let mut sorted = f.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let boundaries = (1..m).map(|k| sorted[order_index(k, m, n) - 1]).collect();
    SpectralBins::from_boundaries(boundaries).map_err(|_| {
        QmdaError::InvalidParameter(format!(
            "{m} bins need strictly increasing quantiles; the samples have too few distinct values"
        ))
    })
}

/// Spectral data of the projected observable.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableOperator {
    a: Mat,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat,
    bins: SpectralBins,
    /// Bin index of each eigenvalue.
    assignment: Vec<usize>,
    projectors: Vec<Mat>,
}

impl ObservableOperator {
    pub fn new(a: Mat, bins: SpectralBins) -> Result<Self> {
        if !a.is_square() {
            return Err(QmdaError::DimensionMismatch("observable matrix is not square".into()));
        }
        let (eigenvalues, eigenvectors) = sym_eig(&a)?;
        let assignment: Vec<usize> = eigenvalues.iter().map(|&x| bins.bin_of(x)).collect();
        let projectors = spectral_projectors(&eigenvectors, &assignment, bins.m());
        Ok(ObservableOperator {
            a,
            eigenvalues,
            eigenvectors,
            bins,
            assignment,
            projectors,
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn l(&self) -> usize {
        self.a.rows()
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns are orthonormal eigenvectors.
    pub fn eigenvectors(&self) -> &Mat {
        &self.eigenvectors
    }

    pub fn bins(&self) -> &SpectralBins {
        &self.bins
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn projectors(&self) -> &[Mat] {
        &self.projectors
    }
}

/// `E_m = Σ_{j in bin m} u_j u_jᵀ`.
fn spectral_projectors(u: &Mat, assignment: &[usize], m: usize) -> Vec<Mat> {
    let l = u.rows();
    (0..m)
        .map(|bin| {
            let cols: Vec<usize> = (0..assignment.len()).filter(|&j| assignment[j] == bin).collect();
            if cols.is_empty() {
                return Mat::zeros(l, l);
            }
            let sub = Mat::from_fn(l, cols.len(), |i, k| u.get(i, cols[k]));
            let mut e = gemm(1.0, &sub, false, &sub, true);
            e.symmetrize();
            e
        })
        .collect()
}

/// Everything the forecast–analysis cycle needs apart from the effect map.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSet {
    pub koopman: KoopmanSet,
    pub observable: ObservableOperator,
}

impl OperatorSet {
    pub fn new(koopman: KoopmanSet, observable: ObservableOperator) -> Result<Self> {
        if koopman.l() != observable.l() {
            return Err(QmdaError::DimensionMismatch(format!(
                "shift matrices are {}x{0}, observable is {}x{1}",
                koopman.l(),
                observable.l()
            )));
        }
        Ok(OperatorSet {
            koopman,
            observable,
        })
    }

    pub fn l(&self) -> usize {
        self.koopman.l()
    }
}

/// Anything that maps an observation to an effect on the coefficient space.
pub trait EffectMap: Sync {
    fn l(&self) -> usize;

    /// The effect matrix for observation `y`.
    fn matrix(&self, y: &[f64]) -> Result<Mat>;

    /// The effect applied to a coefficient vector.
    fn apply(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.matrix(y)?.matvec(v))
    }
}

/// The identity effect: observations carry no information.
#[derive(Clone, Debug)]
pub struct IdentityEffect(pub usize);

impl EffectMap for IdentityEffect {
    fn l(&self) -> usize {
        self.0
    }

    fn matrix(&self, _y: &[f64]) -> Result<Mat> {
        Ok(Mat::identity(self.0))
    }

    fn apply(&self, _y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(v.to_vec())
    }
}

/// Kernel between an observation and the training observations, returned
/// sparsely as `(n, ψ(y, y_n))` with zero values omitted.
pub trait ObservationWeights: Sync {
    fn n(&self) -> usize;
    fn weights(&self, y: &[f64]) -> Result<Vec<(usize, f64)>>;
}

impl<K: ObservationWeights> ObservationWeights for &K {
    fn n(&self) -> usize {
        (*self).n()
    }

    fn weights(&self, y: &[f64]) -> Result<Vec<(usize, f64)>> {
        (*self).weights(y)
    }
}

/// `ψ ≡ c`, for tests.
#[derive(Clone, Debug)]
pub struct ConstantWeights {
    pub n: usize,
    pub value: f64,
}

impl ObservationWeights for ConstantWeights {
    fn n(&self) -> usize {
        self.n
    }

    fn weights(&self, _y: &[f64]) -> Result<Vec<(usize, f64)>> {
        if self.value == 0.0 {
            return Ok(Vec::new());
        }
        Ok((0..self.n).map(|i| (i, self.value)).collect())
    }
}

/// Variable-bandwidth bump kernel on observation space,
/// `ψ(y, y') = η_bump(d(y, y') / (ε √(ρ(y) ρ(y'))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpKernel {
    bandwidth: BandwidthFunction,
    scales: Vec<f64>,
    epsilon: f64,
    tuning: TuningResult,
}

impl BumpKernel {
    pub fn from_parts(bandwidth: BandwidthFunction, epsilon: f64, tuning: TuningResult) -> Self {
        let scales = bandwidth.length_scales();
        BumpKernel {
            bandwidth,
            scales,
            epsilon,
            tuning,
        }
    }

    pub fn bandwidth(&self) -> &BandwidthFunction {
        &self.bandwidth
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn tuning(&self) -> &TuningResult {
        &self.tuning
    }

    pub fn eval(&self, y: &[f64], n: usize) -> Result<f64> {
        let rho = self.bandwidth.length_scale_at(y)?;
        let d2 = sq_dist(y, self.bandwidth.points().row(n));
        Ok(bump_sq(d2 / (self.epsilon * self.epsilon * rho * self.scales[n])))
    }
}

impl ObservationWeights for BumpKernel {
    fn n(&self) -> usize {
        self.scales.len()
    }

    fn weights(&self, y: &[f64]) -> Result<Vec<(usize, f64)>> {
        let rho = self.bandwidth.length_scale_at(y)?;
        let pts = self.bandwidth.points();
        let e2 = self.epsilon * self.epsilon;
        let mut out = Vec::new();
        for (n, &s) in self.scales.iter().enumerate() {
            let w = bump_sq(sq_dist(y, pts.row(n)) / (e2 * rho * s));
            if w > 0.0 {
                out.push((n, w));
            }
        }
        Ok(out)
    }
}

/// Bandwidth function on the training observations plus a bump-shape bandwidth
/// tuned on the scaled distance.
pub fn observation_kernel(y_train: &Mat, params: &KernelParams) -> Result<BumpKernel> {
    let bandwidth = knn_bandwidth(y_train, params)?;
    let scales = bandwidth.length_scales();
    let tuning = tune_bandwidth(
        &ScaledSq {
            inner: &PointSq(y_train),
            scale: &scales,
        },
        &Shape::Bump,
        params,
    )?;
    Ok(BumpKernel {
        bandwidth,
        scales,
        epsilon: tuning.epsilon_star,
        tuning,
    })
}

/// `F′(y) = (1/N) Φᵀ diag(√ψ(y, ·)) Φ`; optionally the exact square root
/// `(π ψ)^{1/2}` instead.
#[derive(Clone, Debug)]
pub struct EffectFeatureMap<'a, K> {
    phi: &'a Mat,
    kernel: K,
    exact_sqrt: bool,
}

impl<'a, K: ObservationWeights> EffectFeatureMap<'a, K> {
    pub fn new(basis: &'a KernelBasis, kernel: K) -> Result<Self> {
        if kernel.n() != basis.n() {
            return Err(QmdaError::DimensionMismatch(format!(
                "observation kernel has {} training points, basis has {}",
                kernel.n(),
                basis.n()
            )));
        }
        Ok(EffectFeatureMap {
            phi: basis.phi(),
            kernel,
            exact_sqrt: false,
        })
    }

    pub fn with_exact_sqrt(mut self, exact: bool) -> Self {
        self.exact_sqrt = exact;
        self
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    /// `(1/N) Φᵀ diag(w) Φ` over the rows where `w` is nonzero.
    fn sparse_gram(&self, weights: &[(usize, f64)]) -> Mat {
        let l = self.phi.cols();
        let n = self.phi.rows();
        if weights.is_empty() {
            return Mat::zeros(l, l);
        }
        let rows = Mat::from_fn(weights.len(), l, |k, j| self.phi.get(weights[k].0, j));
        let w: Vec<f64> = weights.iter().map(|p| p.1).collect();
        weighted_gram(&rows, &w, n)
    }
}

impl<K: ObservationWeights> EffectMap for EffectFeatureMap<'_, K> {
    fn l(&self) -> usize {
        self.phi.cols()
    }

    fn matrix(&self, y: &[f64]) -> Result<Mat> {
        let mut w = self.kernel.weights(y)?;
        if self.exact_sqrt {
            return sym_sqrt(&self.sparse_gram(&w));
        }
        for p in &mut w {
            p.1 = p.1.sqrt();
        }
        Ok(self.sparse_gram(&w))
    }

    fn apply(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if self.exact_sqrt {
            return Ok(self.matrix(y)?.matvec(v));
        }
        let l = self.phi.cols();
        let n = self.phi.rows() as f64;
        let mut out = vec![0.0; l];
        for (row, w) in self.kernel.weights(y)? {
            let r = self.phi.row(row);
            let c = w.sqrt() * crate::linalg::dot(r, v) / n;
            crate::linalg::axpy(c, r, &mut out);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, orthonormalize, spectral_norm, sym_eigenvalues};
    use proptest::prelude::*;

    /// φ_0 = 𝟙, φ_1 = (1, -1, 1, -1).
    fn four_point() -> KernelBasis {
        let phi = Mat::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
            vec![1.0, -1.0],
        ])
        .unwrap();
        KernelBasis::new(phi, vec![1.0, 0.5]).unwrap()
    }

    /// Random orthonormal basis with a constant first vector.
    fn random_basis(n: usize, l: usize, seed: u64) -> KernelBasis {
        let mut g = gaussian_matrix(n, l, seed);
        for i in 0..n {
            g.set(i, 0, 1.0);
        }
        let mut q = orthonormalize(&g).unwrap();
        q.scale((n as f64).sqrt());
        if q.get(0, 0) < 0.0 {
            let c: Vec<f64> = q.col(0).iter().map(|v| -v).collect();
            q.set_col(0, &c);
        }
        KernelBasis::new(q, vec![1.0; l]).unwrap()
    }

    #[test]
    fn shift_of_alternating_basis() {
        let b = four_point();
        let u1 = koopman_matrix(&b, 1).unwrap();
        assert_eq!(u1, Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap());
        assert_eq!(koopman_matrix(&b, 0).unwrap(), Mat::identity(2));
        assert!(koopman_matrix(&b, 4).is_err());
        assert!(koopman_matrix(&b, -4).is_err());
    }

    #[test]
    fn negative_shift_is_transpose() {
        let b = random_basis(50, 6, 1);
        for q in 1..5 {
            let up = koopman_matrix(&b, q).unwrap();
            let un = koopman_matrix(&b, -q).unwrap();
            assert_eq!(un, up.transpose());
            assert!(spectral_norm(&up).unwrap() <= 1.0 + 1e-8);
            assert!((up.get(0, 0) - 1.0).abs() < 1e-12);
            for j in 1..6 {
                assert!(up.get(0, j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multiplication_operator_examples() {
        let b = four_point();
        let a = multiplication_operator(&b, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expect = Mat::from_rows(&[vec![2.5, -0.5], vec![-0.5, 2.5]]).unwrap();
        assert!(a.max_abs_diff(&expect) < 1e-15);
        let c = multiplication_operator(&b, &[1.5; 4]).unwrap();
        assert!(c.max_abs_diff(&Mat::identity(2).scaled(1.5)) < 1e-15);
        assert!(multiplication_operator(&b, &[1.0; 3]).is_err());
    }

    #[test]
    fn mean_entry_is_training_mean() {
        let b = random_basis(40, 5, 2);
        let f: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = multiplication_operator(&b, &f).unwrap();
        let mean = f.iter().sum::<f64>() / 40.0;
        assert!((a.get(0, 0) - mean).abs() < 1e-14);
    }

    #[test]
    fn full_rank_compression_is_exact() {
        let n = 24;
        let b = random_basis(n, n, 3);
        let f: Vec<f64> = (0..n).map(|i| (i as f64).cos() * 2.0).collect();
        let a = multiplication_operator(&b, &f).unwrap();
        let c = gaussian_matrix(n, 1, 4).into_vec();
        let lhs = b.phi().matvec(&a.matvec(&c));
        let pc = b.phi().matvec(&c);
        for i in 0..n {
            assert!((lhs[i] - f[i] * pc[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn quantile_bins() {
        let one = spectral_bins(&[3.0, 1.0], 1).unwrap();
        assert_eq!(one.m(), 1);
        assert_eq!(one.interval(0), (f64::NEG_INFINITY, f64::INFINITY));
        let two = spectral_bins(&[4.0, 1.0, 3.0, 2.0], 2).unwrap();
        assert_eq!(two.boundaries(), &[2.0]);
        assert_eq!(two.bin_of(2.0), 0);
        assert_eq!(two.bin_of(2.0 + 1e-12), 1);
        assert_eq!(two.width(0), None);
        assert!(spectral_bins(&[1.0, 1.0, 1.0, 2.0], 4).is_err());
    }

    #[test]
    fn bins_hold_equal_mass() {
        let f: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 * 0.37).collect();
        for m in [2usize, 7, 32] {
            let bins = spectral_bins(&f, m).unwrap();
            let mut counts = vec![0usize; m];
            for &x in &f {
                counts[bins.bin_of(x)] += 1;
            }
            for c in counts {
                assert!((c as f64 - 1000.0 / m as f64).abs() <= 1.0 + 1e-9, "{c} in {m}");
            }
        }
    }

    #[test]
    fn diagonal_projectors() {
        let a = Mat::diag(&[1.0, 3.0]);
        let bins = SpectralBins::from_boundaries(vec![2.0]).unwrap();
        let op = ObservableOperator::new(a, bins).unwrap();
        assert_eq!(op.projectors()[0], Mat::diag(&[1.0, 0.0]));
        assert_eq!(op.projectors()[1], Mat::diag(&[0.0, 1.0]));
        // an eigenvalue on a boundary belongs to the lower bin
        let op = ObservableOperator::new(
            Mat::diag(&[2.0, 3.0]),
            SpectralBins::from_boundaries(vec![2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(op.assignment(), &[0, 1]);
    }

    #[test]
    fn bump_kernel_values() {
        let y = Mat::from_fn(30, 2, |i, j| ((i * 3 + j) as f64 * 0.77).sin());
        let k = observation_kernel(&y, &KernelParams::default()).unwrap();
        let at = |n| k.eval(y.row(n), n).unwrap();
        assert!((at(4) - (-1f64).exp()).abs() < 1e-15);
        let w = k.weights(y.row(4)).unwrap();
        assert!(w.iter().any(|&(n, v)| n == 4 && (v - (-1f64).exp()).abs() < 1e-15));
        assert!(w.iter().all(|&(_, v)| v > 0.0 && v <= (-1f64).exp()));
        // far from the data the length scale grows and the kernel flattens
        let far = k.weights(&[100.0, 100.0]).unwrap();
        assert!(far.iter().all(|&(_, v)| v.is_finite() && v <= (-1f64).exp()));
    }

    #[test]
    fn effect_stubs() {
        let b = four_point();
        let one = EffectFeatureMap::new(&b, ConstantWeights { n: 4, value: 1.0 }).unwrap();
        assert!(one.matrix(&[0.0]).unwrap().max_abs_diff(&Mat::identity(2)) < 1e-15);
        let zero = EffectFeatureMap::new(&b, ConstantWeights { n: 4, value: 0.0 }).unwrap();
        assert_eq!(zero.matrix(&[0.0]).unwrap(), Mat::zeros(2, 2));
        assert!(EffectFeatureMap::new(&b, ConstantWeights { n: 3, value: 1.0 }).is_err());
    }

    struct FirstOnly;

    impl ObservationWeights for FirstOnly {
        fn n(&self) -> usize {
            4
        }
        fn weights(&self, _y: &[f64]) -> Result<Vec<(usize, f64)>> {
            Ok(vec![(0, 1.0)])
        }
    }

    #[test]
    fn effect_from_single_point() {
        let b = four_point();
        let e = EffectFeatureMap::new(&b, FirstOnly).unwrap();
        let m = e.matrix(&[]).unwrap();
        assert!(m.max_abs_diff(&Mat::from_fn(2, 2, |_, _| 0.25)) < 1e-15);
        let v = [0.3, -0.8];
        let direct = m.matvec(&v);
        let applied = e.apply(&[], &v).unwrap();
        for k in 0..2 {
            assert!((direct[k] - applied[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_square_root_path() {
        let b = random_basis(60, 6, 8);
        let y = Mat::from_fn(60, 1, |i, _| (i as f64 * 0.41).sin());
        let k = observation_kernel(&y, &KernelParams::default()).unwrap();
        let exact = EffectFeatureMap::new(&b, k).unwrap().with_exact_sqrt(true);
        let m = exact.matrix(&[0.2]).unwrap();
        let f = exact.sparse_gram(&exact.kernel().weights(&[0.2]).unwrap());
        assert!(m.matmul(&m).max_abs_diff(&f) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn projector_algebra(seed in 0u64..500, m in 1usize..6) {
            let g = gaussian_matrix(8, 8, seed);
            let mut a = g.add(&g.transpose());
            a.scale(0.5);
            let samples: Vec<f64> = gaussian_matrix(200, 1, seed + 1).into_vec();
            let bins = spectral_bins(&samples, m).unwrap();
            let op = ObservableOperator::new(a, bins).unwrap();
            let es = op.projectors();
            let mut sum = Mat::zeros(8, 8);
            for (i, e) in es.iter().enumerate() {
                sum = sum.add(e);
                prop_assert!(e.matmul(e).max_abs_diff(e) < 1e-10);
                prop_assert!(e.asymmetry() < 1e-10);
                for f in &es[i + 1..] {
                    prop_assert!(e.matmul(f).max_abs() < 1e-10);
                }
            }
            prop_assert!(sum.max_abs_diff(&Mat::identity(8)) < 1e-10);
        }

        #[test]
        fn observable_spectrum_within_sample_range(seed in 0u64..500) {
            let b = random_basis(80, 10, seed);
            let f: Vec<f64> = gaussian_matrix(80, 1, seed + 7).into_vec();
            let a = multiplication_operator(&b, &f).unwrap();
            let ev = sym_eigenvalues(&a).unwrap();
            let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(ev[0] >= lo - 1e-8 && ev[9] <= hi + 1e-8);
        }

        #[test]
        fn effects_are_contractions(seed in 0u64..500) {
            let b = random_basis(70, 8, seed);
            let y = gaussian_matrix(70, 2, seed + 3);
            let k = observation_kernel(&y, &KernelParams::default()).unwrap();
            let e = EffectFeatureMap::new(&b, k).unwrap();
            let queries = gaussian_matrix(10, 2, seed + 5);
            for q in 0..10 {
                let m = e.matrix(queries.row(q)).unwrap();
                let ev = sym_eigenvalues(&m).unwrap();
                prop_assert!(ev[0] >= -1e-10 && ev[7] <= 1.0 + 1e-10);
            }
        }
    }
}
