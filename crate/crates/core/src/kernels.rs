//! Pairwise distances, nearest-neighbour bandwidth functions, bandwidth
//! tuning, variable-bandwidth Gaussian kernels and the bistochastic
//! factorization.
//!
//! Distances are handled squared throughout. Anything that sums over pairs
//! does so row by row in a fixed order and combines row results
//! sequentially, so results do not depend on the rayon pool size.

use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QmdaError, Result};
use crate::linalg::{gemm, Mat};

/// Above this exponent `exp(-x)` is exactly zero in `f64`.
const EXP_UNDERFLOW: f64 = 746.0;

/// Radial kernel shape evaluated on the squared argument `u²`.
pub trait ShapeFn: Sync {
    fn eval_sq(&self, u2: f64) -> f64;

    /// The shape vanishes identically for `u² >= support_sq()`.
    fn support_sq(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `exp(-u²)`
    Gaussian,
    /// `exp(-1/(1-u²))` on `|u| < 1`, zero elsewhere.
    Bump,
}

impl ShapeFn for Shape {
    #[inline]
    fn eval_sq(&self, u2: f64) -> f64 {
        match self {
            Shape::Gaussian => (-u2).exp(),
            Shape::Bump => bump_sq(u2),
        }
    }

    fn support_sq(&self) -> f64 {
        match self {
            Shape::Gaussian => EXP_UNDERFLOW,
            Shape::Bump => 1.0,
        }
    }
}

#[inline]
pub fn bump_sq(u2: f64) -> f64 {
    if u2 < 1.0 {
        (-1.0 / (1.0 - u2)).exp()
    } else {
        0.0
    }
}

/// Row access to a symmetric matrix of squared distances.
pub trait SqDistRows: Sync {
    fn len(&self) -> usize;

    /// Writes `d²(x_i, x_j)` for `j` in `cols` into `out[..cols.len()]`.
    fn fill_row(&self, i: usize, cols: Range<usize>, out: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A precomputed dense `N×N` matrix.
pub struct DenseSq<'a>(pub &'a Mat);

impl SqDistRows for DenseSq<'_> {
    fn len(&self) -> usize {
        self.0.rows()
    }

    fn fill_row(&self, i: usize, cols: Range<usize>, out: &mut [f64]) {
        let n = cols.len();
        out[..n].copy_from_slice(&self.0.row(i)[cols]);
    }
}

/// Euclidean distances computed on demand from points stored as rows.
pub struct PointSq<'a>(pub &'a Mat);

impl SqDistRows for PointSq<'_> {
    fn len(&self) -> usize {
        self.0.rows()
    }

    fn fill_row(&self, i: usize, cols: Range<usize>, out: &mut [f64]) {
        let xi = self.0.row(i);
        for (o, j) in out.iter_mut().zip(cols) {
            *o = sq_dist(xi, self.0.row(j));
        }
    }
}

/// `d²(x, x') / (s(x) s(x'))`, the square of `d / sqrt(s s')`.
pub struct ScaledSq<'a, R> {
    pub inner: &'a R,
    pub scale: &'a [f64],
}

impl<R: SqDistRows> SqDistRows for ScaledSq<'_, R> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn fill_row(&self, i: usize, cols: Range<usize>, out: &mut [f64]) {
        let si = self.scale[i];
        let n = cols.len();
        self.inner.fill_row(i, cols.clone(), out);
        for (o, j) in out[..n].iter_mut().zip(cols) {
            *o /= si * self.scale[j];
        }
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense squared distances between the rows of `x`, via `|a|² + |b|² - 2a·b`.
/// The diagonal is exactly zero, the result exactly symmetric and clamped at
/// zero.
pub fn self_sq_dists(x: &Mat) -> Mat {
    let n = x.rows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect();
    let mut g = gemm(1.0, x, false, x, true);
    g.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j {
                    0.0
                } else {
                    (norms[i] + norms[j] - 2.0 * *v).max(0.0)
                };
            }
        });
    // mirror the upper triangle so that symmetry is exact
    for i in 0..n {
        for j in 0..i {
            let v = g.get(j, i);
            g.set(i, j, v);
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub knn: usize,
    pub grid_a: f64,
    pub grid_j1: i32,
    pub grid_j2: i32,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            knn: 8,
            grid_a: 0.25,
            grid_j1: -40,
            grid_j2: 40,
        }
    }
}

impl KernelParams {
    pub fn with_knn(self, knn: usize) -> Self {
        KernelParams { knn, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn < 2 {
            return Err(QmdaError::InvalidParameter(format!(
                "knn must be at least 2, got {}",
                self.knn
            )));
        }
        self.validate_grid()
    }

    fn validate_grid(&self) -> Result<()> {
        if !(self.grid_a > 0.0) || !self.grid_a.is_finite() {
            return Err(QmdaError::InvalidParameter(format!(
                "grid exponent must be positive, got {}",
                self.grid_a
            )));
        }
        if self.grid_j2 < self.grid_j1 + 2 {
            return Err(QmdaError::InvalidParameter(format!(
                "grid range [{}, {}] has no interior point",
                self.grid_j1, self.grid_j2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub j: i32,
    pub epsilon: f64,
    pub s: f64,
    /// Log-derivative, absent at the two end points.
    pub m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub epsilon_star: f64,
    pub m_star: f64,
    pub grid: Vec<GridPoint>,
}

/// Picks the bandwidth on the grid `2^(a j)` that maximises the log-slope of
/// the kernel sum. Ties go to the smallest bandwidth.
pub fn tune_bandwidth(
    dist: &impl SqDistRows,
    shape: &impl ShapeFn,
    params: &KernelParams,
) -> Result<TuningResult> {
    params.validate_grid()?;
    let n = dist.len();
    if n == 0 {
        return Err(QmdaError::Empty("no points to tune on".into()));
    }
    let js: Vec<i32> = (params.grid_j1..=params.grid_j2).collect();
    let eps: Vec<f64> = js.iter().map(|&j| 2f64.powf(params.grid_a * j as f64)).collect();
    let inv_eps2: Vec<f64> = eps.iter().map(|e| 1.0 / (e * e)).collect();
    let support = shape.support_sq();
    let g = js.len();

    // off-diagonal sums, one row at a time over the strict upper triangle
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, i| {
                let mut acc = vec![0.0; g];
                let m = n - i - 1;
                if m == 0 {
                    return acc;
                }
                dist.fill_row(i, i + 1..n, buf);
                for &d2 in &buf[..m] {
                    // largest bandwidth first; once the argument leaves the
                    // support every smaller bandwidth contributes zero too
                    for k in (0..g).rev() {
                        let u2 = d2 * inv_eps2[k];
                        if u2 >= support {
                            break;
                        }
                        acc[k] += shape.eval_sq(u2);
                    }
                }
                acc
            },
        )
        .collect();
    let mut off = vec![0.0; g];
    for r in &rows {
        for k in 0..g {
            off[k] += r[k];
        }
    }
    let diag = n as f64 * shape.eval_sq(0.0);
    let n2 = (n as f64) * (n as f64);
    let s: Vec<f64> = off.iter().map(|o| (diag + 2.0 * o) / n2).collect();
    for (k, &sk) in s.iter().enumerate() {
        if !(sk > 0.0) {
            return Err(QmdaError::VanishingKernelSum {
                grid_index: js[k],
                epsilon: eps[k],
            });
        }
    }
    let mut grid: Vec<GridPoint> = (0..g)
        .map(|k| GridPoint {
            j: js[k],
            epsilon: eps[k],
            s: s[k],
            m: None,
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for k in 1..g - 1 {
        let m = (s[k + 1] / s[k - 1]).ln() / (2.0 * params.grid_a);
        grid[k].m = Some(m);
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((k, m));
        }
    }
    let (k, m_star) = best.expect("grid has an interior point");
    Ok(TuningResult {
        epsilon_star: eps[k],
        m_star,
        grid,
    })
}

/// Mean squared distance to the `knn` nearest points, the query itself
/// included when it belongs to the set. Selection uses `dist`; the selected
/// distances are then recomputed exactly from `points`.
pub fn knn_sq_radius(dist: &impl SqDistRows, points: &Mat, knn: usize) -> Result<Vec<f64>> {
    let n = dist.len();
    if knn < 1 || knn > n {
        return Err(QmdaError::InvalidParameter(format!(
            "knn = {knn} with {n} points"
        )));
    }
    let r2: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], Vec::with_capacity(n)),
            |(buf, idx), i| {
                dist.fill_row(i, 0..n, buf);
                idx.clear();
                idx.extend(0..n);
                nearest(buf, idx, knn);
                let xi = points.row(i);
                idx[..knn].iter().map(|&j| sq_dist(xi, points.row(j))).sum::<f64>() / knn as f64
            },
        )
        .collect();
    if let Some(i) = r2.iter().position(|v| !(*v > 0.0)) {
        return Err(QmdaError::ZeroBandwidth { index: i });
    }
    Ok(r2)
}

/// Moves the indices of the `k` smallest entries of `d2` to the front of
/// `idx`, breaking ties by index.
fn nearest(d2: &[f64], idx: &mut [usize], k: usize) {
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    }
}

/// Kernel density type bandwidth function built from nearest-neighbour radii.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthFunction {
    points: Mat,
    r2: Vec<f64>,
    values: Vec<f64>,
    knn: usize,
    tuning: TuningResult,
}

impl BandwidthFunction {
    pub fn points(&self) -> &Mat {
        &self.points
    }

    /// Squared nearest-neighbour radius at each reference point.
    pub fn r2(&self) -> &[f64] {
        &self.r2
    }

    /// `b` at the reference points.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn knn(&self) -> usize {
        self.knn
    }

    /// Length scale `b^(-1/m*)` at the reference points, the form in which
    /// the bandwidth function enters variable-bandwidth kernels.
    pub fn length_scales(&self) -> Vec<f64> {
        self.values.iter().map(|&b| self.length_scale_of(b)).collect()
    }

    /// Length scale at an arbitrary query point.
    pub fn length_scale_at(&self, x: &[f64]) -> Result<f64> {
        let m = self.m_star();
        if m > 0.0 {
            Ok((-self.log_eval(x)? / m).exp())
        } else {
            Ok(1.0)
        }
    }

    fn length_scale_of(&self, b: f64) -> f64 {
        let m = self.m_star();
        if m > 0.0 {
            b.powf(-1.0 / m)
        } else {
            1.0
        }
    }

    pub fn epsilon_star(&self) -> f64 {
        self.tuning.epsilon_star
    }

    pub fn m_star(&self) -> f64 {
        self.tuning.m_star
    }

    pub fn tuning(&self) -> &TuningResult {
        &self.tuning
    }

    /// Rebuilds the function from stored parts without recomputation.
    pub fn from_parts(
        points: Mat,
        r2: Vec<f64>,
        values: Vec<f64>,
        knn: usize,
        tuning: TuningResult,
    ) -> Result<Self> {
        let n = points.rows();
        if r2.len() != n || values.len() != n {
            return Err(QmdaError::DimensionMismatch(format!(
                "bandwidth data for {n} points has {} radii and {} values",
                r2.len(),
                values.len()
            )));
        }
        Ok(BandwidthFunction {
            points,
            r2,
            values,
            knn,
            tuning,
        })
    }

    /// Squared radius of an arbitrary query point.
    pub fn radius_sq_at(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let d2: Vec<f64> = (0..self.points.rows())
            .map(|j| sq_dist(x, self.points.row(j)))
            .collect();
        let mut idx: Vec<usize> = (0..d2.len()).collect();
        nearest(&d2, &mut idx, self.knn);
        let r2 = idx[..self.knn].iter().map(|&j| d2[j]).sum::<f64>() / self.knn as f64;
        Ok(r2)
    }

    /// `b(x)` at an arbitrary query point.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let log_b = self.log_eval(x)?;
        let b = log_b.exp();
        if !(b > 0.0) || !b.is_finite() {
            return Err(QmdaError::InvalidParameter(format!(
                "bandwidth function value exp({log_b}) is not representable"
            )));
        }
        Ok(b)
    }

    /// `ln b(x)`, accumulated with a max shift so that queries far from the
    /// data do not underflow.
    pub fn log_eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let r2 = self.radius_sq_at(x)?;
        if !(r2 > 0.0) {
            return Err(QmdaError::ZeroBandwidth { index: 0 });
        }
        let r = r2.sqrt();
        let e2 = self.epsilon_star() * self.epsilon_star();
        let args: Vec<f64> = (0..self.points.rows())
            .map(|j| sq_dist(x, self.points.row(j)) / (e2 * r * self.r2[j].sqrt()))
            .collect();
        let shift = args.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum: f64 = args.iter().map(|a| (shift - a).exp()).sum();
        Ok(sum.ln() - shift - log_normalizer(self.points.rows(), self.epsilon_star(), self.m_star(), r2))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.points.cols() {
            return Err(QmdaError::DimensionMismatch(format!(
                "query of dimension {} against points of dimension {}",
                x.len(),
                self.points.cols()
            )));
        }
        Ok(())
    }
}

fn log_normalizer(n: usize, eps: f64, m: f64, r2: f64) -> f64 {
    (n as f64).ln() + 0.5 * m * (PI * eps * r2).ln()
}

fn density_value(kernel_sum: f64, n: usize, eps: f64, m: f64, r2: f64) -> Result<f64> {
    let log_b = kernel_sum.ln() - log_normalizer(n, eps, m, r2);
    let b = log_b.exp();
    if !(b > 0.0) || !b.is_finite() {
        return Err(QmdaError::InvalidParameter(format!(
            "bandwidth function value exp({log_b}) is not representable"
        )));
    }
    Ok(b)
}

/// Bandwidth function of `points` under the Euclidean distance.
pub fn knn_bandwidth(points: &Mat, params: &KernelParams) -> Result<BandwidthFunction> {
    knn_bandwidth_with(points, &PointSq(points), params)
}

/// As [`knn_bandwidth`], reading squared distances from `dist`.
pub fn knn_bandwidth_with(
    points: &Mat,
    dist: &impl SqDistRows,
    params: &KernelParams,
) -> Result<BandwidthFunction> {
    params.validate()?;
    let n = points.rows();
    if dist.len() != n {
        return Err(QmdaError::DimensionMismatch(format!(
            "{} distance rows for {n} points",
            dist.len()
        )));
    }
    let r2 = knn_sq_radius(dist, points, params.knn)?;
    let r: Vec<f64> = r2.iter().map(|v| v.sqrt()).collect();
    let scaled = ScaledSq {
        inner: dist,
        scale: &r,
    };
    let tuning = tune_bandwidth(&scaled, &Shape::Gaussian, params)?;
    let inv_e2 = 1.0 / (tuning.epsilon_star * tuning.epsilon_star);
    let sums = kernel_row_sums(&scaled, |u2| (-(u2 * inv_e2)).exp());
    let values = sums
        .iter()
        .zip(&r2)
        .map(|(&s, &r2)| density_value(s, n, tuning.epsilon_star, tuning.m_star, r2))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BandwidthFunction {
        points: points.clone(),
        r2,
        values,
        knn: params.knn,
        tuning,
    })
}

/// `Σ_j k(d²_ij)` for every row `i`, each row summed in column order.
fn kernel_row_sums(dist: &impl SqDistRows, k: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    let n = dist.len();
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, i| {
                dist.fill_row(i, 0..n, buf);
                buf.iter().map(|&d2| k(d2)).sum()
            },
        )
        .collect()
}

/// `exp(-d²/(ε² b b'))` for squared distances `sq`.
pub fn vb_gaussian_kernel(sq: &Mat, bandwidth: &[f64], epsilon: f64) -> Result<Mat> {
    let mut k = sq.clone();
    vb_gaussian_in_place(&mut k, bandwidth, epsilon)?;
    Ok(k)
}

/// Overwrites squared distances with variable-bandwidth Gaussian kernel values.
pub fn vb_gaussian_in_place(sq: &mut Mat, bandwidth: &[f64], epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(QmdaError::InvalidParameter(format!(
            "kernel bandwidth must be positive, got {epsilon}"
        )));
    }
    if let Some(i) = bandwidth.iter().position(|b| !(*b > 0.0)) {
        return Err(QmdaError::ZeroBandwidth { index: i });
    }
    let (rows, cols) = (sq.rows(), sq.cols());
    if bandwidth.len() != rows || bandwidth.len() != cols {
        return Err(QmdaError::DimensionMismatch(format!(
            "{} bandwidth values for a {rows}x{cols} matrix",
            bandwidth.len()
        )));
    }
    let inv_e2 = 1.0 / (epsilon * epsilon);
    sq.as_mut_slice()
        .par_chunks_mut(cols.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let bi = bandwidth[i];
            for (v, &bj) in row.iter_mut().zip(bandwidth) {
                let x = *v * inv_e2 / (bi * bj);
                *v = if x > EXP_UNDERFLOW { 0.0 } else { (-x).exp() };
            }
        });
    Ok(())
}

/// Degree and column normalizers of the bistochastic factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorKernel {
    pub degree: Vec<f64>,
    pub q: Vec<f64>,
}

impl FactorKernel {
    /// `k̂(x_i, x_j)` given the unnormalized kernel value `k(x_i, x_j)`.
    pub fn entry(&self, k: f64, i: usize, j: usize) -> f64 {
        k / (self.degree[i] * self.q[j].sqrt())
    }
}

/// Degree `d(x_i) = Σ_j k_ij` and `q(x_i) = Σ_j k_ij / d(x_j)`.
pub fn bistochastic_factor(k: &Mat) -> Result<FactorKernel> {
    if !k.is_square() {
        return Err(QmdaError::DimensionMismatch(format!(
            "kernel matrix is {}x{}",
            k.rows(),
            k.cols()
        )));
    }
    let n = k.rows();
    let degree: Vec<f64> = (0..n).into_par_iter().map(|i| k.row(i).iter().sum()).collect();
    if let Some(i) = degree.iter().position(|d| !(*d > 0.0)) {
        return Err(QmdaError::ZeroDegree { index: i });
    }
    let q: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| k.row(i).iter().zip(&degree).map(|(v, d)| v / d).sum())
        .collect();
    if let Some(i) = q.iter().position(|v| !(*v > 0.0)) {
        return Err(QmdaError::ZeroDegree { index: i });
    }
    Ok(FactorKernel { degree, q })
}

/// Replaces kernel values by `k̂` in place and returns the normalizers.
pub fn bistochastic_in_place(k: &mut Mat) -> Result<FactorKernel> {
    let fk = bistochastic_factor(k)?;
    let inv_sqrt_q: Vec<f64> = fk.q.iter().map(|v| 1.0 / v.sqrt()).collect();
    let n = k.cols();
    k.as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let inv_d = 1.0 / fk.degree[i];
            for (v, s) in row.iter_mut().zip(&inv_sqrt_q) {
                *v = *v * inv_d * s;
            }
        });
    Ok(fk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, sym_eigenvalues};
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Mat {
        Mat::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    struct Constant(f64);

    impl ShapeFn for Constant {
        fn eval_sq(&self, _u2: f64) -> f64 {
            self.0
        }
    }

    #[test]
    fn knn_radius_of_three_scalars() {
        let x = column(&[0.0, 1.0, 3.0]);
        let r2 = knn_sq_radius(&PointSq(&x), &x, 2).unwrap();
        assert_eq!(r2, vec![0.5, 0.5, 2.0]);
    }

    #[test]
    fn identical_points_have_zero_bandwidth() {
        let x = Mat::from_fn(5, 3, |_, j| j as f64 + 0.1);
        let err = knn_bandwidth(&x, &KernelParams::default().with_knn(2)).unwrap_err();
        assert!(err.to_string().contains("zero bandwidth"), "{err}");
        let dense = self_sq_dists(&x);
        let err = knn_bandwidth_with(&x, &DenseSq(&dense), &KernelParams::default().with_knn(2));
        assert!(matches!(err, Err(QmdaError::ZeroBandwidth { .. })));
    }

    #[test]
    fn knn_must_exceed_one() {
        let x = column(&[0.0, 1.0, 3.0]);
        let p = KernelParams {
            knn: 1,
            ..Default::default()
        };
        assert!(matches!(knn_bandwidth(&x, &p), Err(QmdaError::InvalidParameter(_))));
    }

    #[test]
    fn two_point_tuning_matches_closed_form() {
        let x = column(&[0.0, 1.0]);
        let p = KernelParams {
            knn: 2,
            grid_a: 1.0,
            grid_j1: -4,
            grid_j2: 4,
        };
        let t = tune_bandwidth(&PointSq(&x), &Shape::Gaussian, &p).unwrap();
        let s = |e: f64| (2.0 + 2.0 * (-1.0 / (e * e)).exp()) / 4.0;
        let mut best = (0, f64::NEG_INFINITY);
        for (k, gp) in t.grid.iter().enumerate() {
            let e = 2f64.powi(gp.j);
            assert!((gp.s - s(e)).abs() < 1e-15);
            if k > 0 && k + 1 < t.grid.len() {
                let m = (s(2.0 * e) / s(e / 2.0)).ln() / 2.0;
                assert!((gp.m.unwrap() - m).abs() < 1e-12);
                if m > best.1 {
                    best = (gp.j, m);
                }
            }
        }
        assert_eq!(t.epsilon_star, 2f64.powi(best.0));
        assert!((t.m_star - best.1).abs() < 1e-12);
    }

    #[test]
    fn flat_shape_picks_first_interior_point() {
        let x = column(&[0.0, 1.0, 5.0]);
        let p = KernelParams::default();
        let t = tune_bandwidth(&PointSq(&x), &Constant(0.7), &p).unwrap();
        assert!(t.grid.iter().all(|g| (g.s - 0.7).abs() < 1e-15));
        assert_eq!(t.m_star, 0.0);
        assert_eq!(t.epsilon_star, 2f64.powf(p.grid_a * (p.grid_j1 + 1) as f64));
    }

    #[test]
    fn compact_shape_on_too_fine_grid_fails() {
        let x = column(&[0.0, 10.0]);
        let p = KernelParams {
            knn: 2,
            grid_a: 1.0,
            grid_j1: -6,
            grid_j2: -2,
        };
        // the diagonal keeps S positive for the bump
        assert!(tune_bandwidth(&PointSq(&x), &Shape::Bump, &p).is_ok());
        let err = tune_bandwidth(&PointSq(&x), &Zeroed, &p).unwrap_err();
        assert!(matches!(err, QmdaError::VanishingKernelSum { grid_index: -6, .. }));
    }

    struct Zeroed;

    impl ShapeFn for Zeroed {
        fn eval_sq(&self, u2: f64) -> f64 {
            if u2 > 0.0 && u2 < 1.0 {
                1.0
            } else {
                0.0
            }
        }

        fn support_sq(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn tuning_is_scale_covariant() {
        let x = gaussian_matrix(40, 3, 1);
        let x2 = x.scaled(2.0);
        let p = KernelParams::default();
        let t1 = tune_bandwidth(&PointSq(&x), &Shape::Gaussian, &p).unwrap();
        let t2 = tune_bandwidth(&PointSq(&x2), &Shape::Gaussian, &p).unwrap();
        assert!((t2.epsilon_star / t1.epsilon_star - 2.0).abs() < 1e-12);
        assert!((t2.m_star - t1.m_star).abs() < 1e-9);
    }

    #[test]
    fn grid_must_have_interior() {
        let x = column(&[0.0, 1.0]);
        let p = KernelParams {
            grid_j1: 0,
            grid_j2: 1,
            ..Default::default()
        };
        assert!(tune_bandwidth(&PointSq(&x), &Shape::Gaussian, &p).is_err());
    }

    #[test]
    fn bump_values() {
        assert!((bump_sq(0.0) - (-1f64).exp()).abs() < 1e-16);
        assert!((bump_sq(0.25) - (-4.0f64 / 3.0).exp()).abs() < 1e-16);
        assert!(((-4.0f64 / 3.0).exp() - 0.263597).abs() < 1e-6);
        assert_eq!(bump_sq(1.0), 0.0);
        assert_eq!(bump_sq(4.0), 0.0);
    }

    #[test]
    fn gaussian_kernel_entries() {
        let x = column(&[0.0, 1.0, 3.0]);
        let b = [1.0, 2.0, 0.5];
        let eps = 1.5;
        let k = vb_gaussian_kernel(&self_sq_dists(&x), &b, eps).unwrap();
        let xs = [0.0, 1.0, 3.0];
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = xs[i] - xs[j];
                let expect = (-(d / (eps * (b[i] * b[j]).sqrt())).powi(2)).exp();
                assert!((k.get(i, j) - expect).abs() < 1e-15);
            }
            assert_eq!(k.get(i, i), 1.0);
        }
        let unit = vb_gaussian_kernel(&self_sq_dists(&column(&[0.0, 1.0])), &[1.0, 1.0], 1.0).unwrap();
        assert!((unit.get(0, 1) - (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn dense_distances_match_direct() {
        let x = gaussian_matrix(30, 7, 3);
        let d = self_sq_dists(&x);
        for i in 0..30 {
            for j in 0..30 {
                let direct = sq_dist(x.row(i), x.row(j));
                assert!((d.get(i, j) - direct).abs() < 1e-12);
            }
        }
        assert_eq!(d.asymmetry(), 0.0);
    }

    #[test]
    fn bandwidth_query_at_training_point_matches_stored_value() {
        // a query equal to a training point sees itself as its own nearest
        // neighbour, exactly as during construction
        let x = gaussian_matrix(50, 2, 5);
        let bw = knn_bandwidth(&x, &KernelParams::default()).unwrap();
        for i in [0, 17, 49] {
            let v = bw.eval(x.row(i)).unwrap();
            assert!((v - bw.values()[i]).abs() < 1e-12 * v, "{v} {}", bw.values()[i]);
        }
        let dense = self_sq_dists(&x);
        let bw2 = knn_bandwidth_with(&x, &DenseSq(&dense), &KernelParams::default()).unwrap();
        assert_eq!(bw.tuning().epsilon_star, bw2.tuning().epsilon_star);
        for (a, b) in bw.values().iter().zip(bw2.values()) {
            assert!((a - b).abs() < 1e-10 * a);
        }
    }

    #[test]
    fn single_point_factor() {
        let k = Mat::from_vec(1, 1, vec![0.3]).unwrap();
        let mut kh = k.clone();
        bistochastic_in_place(&mut kh).unwrap();
        assert!((kh.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_factor() {
        let n = 5;
        let mut k = Mat::from_fn(n, n, |_, _| 1.0);
        let fk = bistochastic_in_place(&mut k).unwrap();
        assert!(fk.degree.iter().all(|d| *d == n as f64));
        assert!(fk.q.iter().all(|q| (*q - 1.0).abs() < 1e-15));
        assert!(k.as_slice().iter().all(|v| (*v - 0.2).abs() < 1e-15));
        let p = k.matmul_t(&k).scaled(n as f64);
        assert!(p.as_slice().iter().all(|v| (*v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn two_by_two_factor() {
        let beta = 0.3;
        let mut k = Mat::from_rows(&[vec![1.0, beta], vec![beta, 1.0]]).unwrap();
        bistochastic_in_place(&mut k).unwrap();
        let s = 1.0 + beta;
        assert!((k.get(0, 0) - 1.0 / s).abs() < 1e-15);
        assert!((k.get(0, 1) - beta / s).abs() < 1e-15);
        let p = k.matmul_t(&k).scaled(2.0);
        let expect = [[1.0 + beta * beta, 2.0 * beta], [2.0 * beta, 1.0 + beta * beta]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.get(i, j) - 2.0 * expect[i][j] / (s * s)).abs() < 1e-15);
            }
            assert!(((p.get(i, 0) + p.get(i, 1)) / 2.0 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_degree_is_reported() {
        let mut k = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            bistochastic_in_place(&mut k),
            Err(QmdaError::ZeroDegree { index: 1 })
        ));
    }

    #[test]
    fn sums_do_not_depend_on_thread_count() {
        let x = gaussian_matrix(120, 4, 11);
        let p = KernelParams::default();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let bw = knn_bandwidth(&x, &p).unwrap();
                    let mut k = vb_gaussian_kernel(&self_sq_dists(&x), bw.values(), 0.9).unwrap();
                    bistochastic_in_place(&mut k).unwrap();
                    (bw.values().to_vec(), k)
                })
        };
        assert_eq!(run(1), run(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn factor_is_row_markov_and_psd(seed in 0u64..1000, n in 2usize..40, eps in 0.3f64..3.0) {
            let x = gaussian_matrix(n, 3, seed);
            let b: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 * 0.37).sin().abs()).collect();
            let mut k = vb_gaussian_kernel(&self_sq_dists(&x), &b, eps).unwrap();
            bistochastic_in_place(&mut k).unwrap();
            let p = k.matmul_t(&k).scaled(n as f64);
            for i in 0..n {
                let mean = p.row(i).iter().sum::<f64>() / n as f64;
                prop_assert!((mean - 1.0).abs() < 1e-12, "row {} mean {}", i, mean);
            }
            prop_assert!(p.asymmetry() < 1e-14);
            let mut ps = p.clone();
            ps.symmetrize();
            let ev = sym_eigenvalues(&ps).unwrap();
            prop_assert!(ev[0] >= -1e-10 * ps.max_abs());
        }

        #[test]
        fn gaussian_kernel_in_unit_interval(seed in 0u64..1000, eps in 0.1f64..5.0) {
            let x = gaussian_matrix(15, 2, seed);
            let b: Vec<f64> = (0..15).map(|i| 0.2 + i as f64 * 0.1).collect();
            let k = vb_gaussian_kernel(&self_sq_dists(&x), &b, eps).unwrap();
            for i in 0..15 {
                for j in 0..15 {
                    let v = k.get(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert_eq!(v == 1.0, i == j);
                }
            }
        }
    }
}
