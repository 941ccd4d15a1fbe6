//! The sequential forecast–analysis cycle on pure states and density
//! matrices.

use serde::{Deserialize, Serialize};

use crate::error::{QmdaError, Result};
use crate::linalg::{dot, gemm, norm2, Mat};
use crate::operators::{EffectMap, OperatorSet};

/// States whose norm falls below this are treated as annihilated.
const ANNIHILATION_NORM: f64 = 1e-150;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Pure,
    Density,
}

impl std::str::FromStr for Mode {
    type Err = QmdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure" => Ok(Mode::Pure),
            "density" => Ok(Mode::Density),
            other => Err(QmdaError::InvalidParameter(format!(
                "mode must be pure or density, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepOptions {
    /// Number of forecast leads `J_f`; leads are `0..J_f`.
    pub leads: usize,
    /// Lead `J_o` at which the next observation arrives.
    pub obs_lead: usize,
    /// Analyses whose validity `tr(E ρ E)` falls below this are skipped.
    pub validity_threshold: f64,
    /// Fail instead of skipping when validity vanishes.
    pub strict: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            leads: 101,
            obs_lead: 1,
            validity_threshold: 1e-14,
            strict: false,
        }
    }
}

impl StepOptions {
    fn validate(&self, ops: &OperatorSet) -> Result<()> {
        if self.leads == 0 {
            return Err(QmdaError::InvalidParameter("need at least one lead".into()));
        }
        if self.obs_lead == 0 {
            return Err(QmdaError::InvalidParameter("observation lead must be at least 1".into()));
        }
        let need = (self.leads - 1).max(self.obs_lead);
        if need > ops.koopman.j_max() {
            return Err(QmdaError::InvalidParameter(format!(
                "lead {need} needs shift matrices beyond the stored maximum {}",
                ops.koopman.j_max()
            )));
        }
        Ok(())
    }
}

/// Forecast statistics issued from one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub init: usize,
    /// `f̄_j` for each lead.
    pub mean: Vec<f64>,
    /// `σ_j` for each lead.
    pub spread: Vec<f64>,
    /// `p_j` for each lead, `M` entries each.
    pub prob: Vec<Vec<f64>>,
}

impl ForecastRecord {
    /// Probabilities divided by bin width; unbounded edge bins keep their mass.
    pub fn densities(&self, bins: &crate::operators::SpectralBins) -> Vec<Vec<f64>> {
        self.prob
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(m, &v)| bins.width(m).map_or(v, |w| v / w))
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureState(Vec<f64>);

impl PureState {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        let n = norm2(&xi);
        if !(n > ANNIHILATION_NORM) || !n.is_finite() {
            return Err(QmdaError::InvalidParameter("state vector has zero norm".into()));
        }
        Ok(PureState(xi.iter().map(|v| v / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `ξξᵀ`
    pub fn to_density(&self) -> DensityState {
        let l = self.0.len();
        DensityState(Mat::from_fn(l, l, |i, j| self.0[i] * self.0[j]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityState(Mat);

impl DensityState {
    /// Symmetrizes and normalizes to unit trace.
    pub fn new(mut rho: Mat) -> Result<Self> {
        if !rho.is_square() {
            return Err(QmdaError::DimensionMismatch("density matrix is not square".into()));
        }
        rho.symmetrize();
        let t = rho.trace();
        if !(t > 0.0) {
            return Err(QmdaError::InvalidParameter(format!("density matrix has trace {t}")));
        }
        rho.scale(1.0 / t);
        Ok(DensityState(rho))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }
}

/// `ξ_0 = e_0`, the state whose statistics are those of the training data.
pub fn init_equilibrium_state(l: usize) -> Result<PureState> {
    if l == 0 {
        return Err(QmdaError::InvalidParameter("L must be positive".into()));
    }
    let mut xi = vec![0.0; l];
    xi[0] = 1.0;
    PureState::new(xi)
}

/// Outcome of an analysis step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Analysis {
    Applied { validity: f64 },
    /// The observation was incompatible with the state; the prior was kept.
    Skipped { validity: f64 },
}

fn skip_or_fail(validity: f64, opts: &StepOptions) -> Result<Analysis> {
    if opts.strict {
        Err(QmdaError::ZeroValidity { value: validity })
    } else {
        Ok(Analysis::Skipped { validity })
    }
}

/// Mean, spread and bin probabilities from coordinates in the eigenbasis of
/// the observable.
fn pure_stats(ops: &OperatorSet, coords: &[f64]) -> (f64, f64, Vec<f64>) {
    let obs = &ops.observable;
    let a = obs.eigenvalues();
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut prob = vec![0.0; obs.bins().m()];
    for (k, &c) in coords.iter().enumerate() {
        let w = c * c;
        mean += a[k] * w;
        second += a[k] * a[k] * w;
        prob[obs.assignment()[k]] += w;
    }
    (mean, (second - mean * mean).max(0.0).sqrt(), prob)
}

/// `(U^(j))ᵀ ξ`, normalized.
pub fn evolve_pure(ops: &OperatorSet, xi: &[f64], j: usize) -> Result<Vec<f64>> {
    let u = ops.koopman.get(j)?.t_matvec(xi);
    let n = norm2(&u);
    if !(n > ANNIHILATION_NORM) || !n.is_finite() {
        return Err(QmdaError::StateAnnihilated { lead: j, norm: n });
    }
    Ok(u.iter().map(|v| v / n).collect())
}

/// Forecast record from a pure state followed by analysis of `y_obs` at
/// lead `J_o`.
pub fn step_pure(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    xi: &PureState,
    y_obs: &[f64],
    opts: &StepOptions,
) -> Result<(ForecastRecord, PureState, Analysis)> {
    opts.validate(ops)?;
    let record = forecast_pure(ops, xi, 0, opts)?;
    let (next, analysis) = analyze_pure(ops, effect, xi, y_obs, opts)?;
    Ok((record, next, analysis))
}

/// Forecast statistics for every lead from a pure state.
pub fn forecast_pure(
    ops: &OperatorSet,
    xi: &PureState,
    init: usize,
    opts: &StepOptions,
) -> Result<ForecastRecord> {
    let v = ops.observable.eigenvectors();
    let mut rec = ForecastRecord {
        init,
        mean: Vec::with_capacity(opts.leads),
        spread: Vec::with_capacity(opts.leads),
        prob: Vec::with_capacity(opts.leads),
    };
    for j in 0..opts.leads {
        let xj = evolve_pure(ops, xi.as_slice(), j)?;
        let (m, s, p) = pure_stats(ops, &v.t_matvec(&xj));
        rec.mean.push(m);
        rec.spread.push(s);
        rec.prob.push(p);
    }
    Ok(rec)
}

fn analyze_pure(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    xi: &PureState,
    y_obs: &[f64],
    opts: &StepOptions,
) -> Result<(PureState, Analysis)> {
    let prior = evolve_pure(ops, xi.as_slice(), opts.obs_lead)?;
    condition_pure(effect, prior, y_obs, opts)
}

fn condition_pure(
    effect: &dyn EffectMap,
    prior: Vec<f64>,
    y_obs: &[f64],
    opts: &StepOptions,
) -> Result<(PureState, Analysis)> {
    let post = effect.apply(y_obs, &prior)?;
    let validity = dot(&post, &post);
    if !(validity >= opts.validity_threshold) {
        let a = skip_or_fail(validity, opts)?;
        return Ok((PureState(prior), a));
    }
    let n = validity.sqrt();
    Ok((
        PureState(post.iter().map(|v| v / n).collect()),
        Analysis::Applied { validity },
    ))
}

/// `Σ_ik X_ik Y_ik`, which is `tr(XY)` for symmetric `Y`.
fn frobenius(x: &Mat, y: &Mat) -> f64 {
    dot(x.as_slice(), y.as_slice())
}

/// `(U^(j))ᵀ ρ U^(j)`, normalized to unit trace.
pub fn evolve_density(ops: &OperatorSet, rho: &Mat, j: usize) -> Result<Mat> {
    let u = ops.koopman.get(j)?;
    let t = gemm(1.0, u, true, rho, false);
    let mut s = gemm(1.0, &t, false, u, false);
    s.symmetrize();
    let c = s.trace();
    if !(c > ANNIHILATION_NORM) || !c.is_finite() {
        return Err(QmdaError::StateAnnihilated { lead: j, norm: c });
    }
    s.scale(1.0 / c);
    Ok(s)
}

/// Forecast statistics for every lead from a density matrix.
pub fn forecast_density(
    ops: &OperatorSet,
    rho: &DensityState,
    init: usize,
    opts: &StepOptions,
) -> Result<ForecastRecord> {
    let a = ops.observable.a();
    let mut a2 = a.matmul(a);
    a2.symmetrize();
    let mut rec = ForecastRecord {
        init,
        mean: Vec::with_capacity(opts.leads),
        spread: Vec::with_capacity(opts.leads),
        prob: Vec::with_capacity(opts.leads),
    };
    for j in 0..opts.leads {
        let rj = evolve_density(ops, rho.matrix(), j)?;
        let m = frobenius(&rj, a);
        let s = (frobenius(&rj, &a2) - m * m).max(0.0).sqrt();
        let p = ops
            .observable
            .projectors()
            .iter()
            .map(|e| frobenius(&rj, e))
            .collect();
        rec.mean.push(m);
        rec.spread.push(s);
        rec.prob.push(p);
    }
    Ok(rec)
}

/// Density-matrix counterpart of [`step_pure`].
pub fn step_density(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    rho: &DensityState,
    y_obs: &[f64],
    opts: &StepOptions,
) -> Result<(ForecastRecord, DensityState, Analysis)> {
    opts.validate(ops)?;
    let record = forecast_density(ops, rho, 0, opts)?;
    let prior = evolve_density(ops, rho.matrix(), opts.obs_lead)?;
    let (next, analysis) = condition_density(effect, prior, y_obs, opts)?;
    Ok((record, next, analysis))
}

fn condition_density(
    effect: &dyn EffectMap,
    prior: Mat,
    y_obs: &[f64],
    opts: &StepOptions,
) -> Result<(DensityState, Analysis)> {
    let e = effect.matrix(y_obs)?;
    let mut post = e.matmul(&prior).matmul(&e);
    post.symmetrize();
    let validity = post.trace();
    if !(validity >= opts.validity_threshold) {
        let a = skip_or_fail(validity, opts)?;
        return Ok((DensityState(prior), a));
    }
    post.scale(1.0 / validity);
    Ok((DensityState(post), Analysis::Applied { validity }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ForecastRecord>,
    /// Number of analyses skipped for vanishing validity.
    pub zero_validity: usize,
    pub analyses: usize,
}

/// Runs the cycle from the equilibrium state over `observations` (one row per
/// time). Record `n` is issued from the state that has assimilated
/// observations `1..=n`; row 0 is never assimilated.
pub fn run_qmda(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    observations: &Mat,
    mode: Mode,
    opts: &StepOptions,
) -> Result<RunOutput> {
    opts.validate(ops)?;
    if effect.l() != ops.l() {
        return Err(QmdaError::DimensionMismatch(format!(
            "effect map acts on dimension {}, operators on {}",
            effect.l(),
            ops.l()
        )));
    }
    match mode {
        Mode::Pure => run_pure(ops, effect, observations, opts),
        Mode::Density => run_density(ops, effect, observations, opts),
    }
}

fn run_pure(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    observations: &Mat,
    opts: &StepOptions,
) -> Result<RunOutput> {
    let l = ops.l();
    let count = observations.rows().max(1);
    // the analysis recursion only needs lead J_o, so states are generated
    // first and all leads are then forecast in blocks
    let mut states = Mat::zeros(count, l);
    let mut xi = init_equilibrium_state(l)?;
    states.row_mut(0).copy_from_slice(xi.as_slice());
    let mut zero_validity = 0;
    for n in 1..count {
        let (next, a) = analyze_pure(ops, effect, &xi, observations.row(n), opts)?;
        if let Analysis::Skipped { .. } = a {
            zero_validity += 1;
        }
        xi = next;
        states.row_mut(n).copy_from_slice(xi.as_slice());
    }

    let m = ops.observable.bins().m();
    let v = ops.observable.eigenvectors();
    let mut records: Vec<ForecastRecord> = (0..count)
        .map(|n| ForecastRecord {
            init: n,
            mean: Vec::with_capacity(opts.leads),
            spread: Vec::with_capacity(opts.leads),
            prob: Vec::with_capacity(opts.leads),
        })
        .collect();
    for j in 0..opts.leads {
        // row n of Ξ U is (Uᵀ ξ_n)ᵀ
        let mut evolved = gemm(1.0, &states, false, ops.koopman.get(j)?, false);
        for n in 0..count {
            let row = evolved.row_mut(n);
            let nrm = norm2(row);
            if !(nrm > ANNIHILATION_NORM) || !nrm.is_finite() {
                return Err(QmdaError::StateAnnihilated { lead: j, norm: nrm });
            }
            row.iter_mut().for_each(|x| *x /= nrm);
        }
        let coords = gemm(1.0, &evolved, false, v, false);
        for (n, rec) in records.iter_mut().enumerate() {
            let (mean, spread, p) = pure_stats(ops, coords.row(n));
            debug_assert_eq!(p.len(), m);
            rec.mean.push(mean);
            rec.spread.push(spread);
            rec.prob.push(p);
        }
    }
    Ok(RunOutput {
        records,
        zero_validity,
        analyses: count - 1,
    })
}

fn run_density(
    ops: &OperatorSet,
    effect: &dyn EffectMap,
    observations: &Mat,
    opts: &StepOptions,
) -> Result<RunOutput> {
    let l = ops.l();
    let count = observations.rows().max(1);
    let mut rho = init_equilibrium_state(l)?.to_density();
    let mut records = Vec::with_capacity(count);
    let mut zero_validity = 0;
    for n in 0..count {
        records.push(forecast_density(ops, &rho, n, opts)?);
        if n + 1 < count {
            let prior = evolve_density(ops, rho.matrix(), opts.obs_lead)?;
            let (next, a) = condition_density(effect, prior, observations.row(n + 1), opts)?;
            if let Analysis::Skipped { .. } = a {
                zero_validity += 1;
            }
            rho = next;
        }
    }
    Ok(RunOutput {
        records,
        zero_validity,
        analyses: count - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, orthonormalize, sym_eigenvalues};
    use crate::operators::{
        spectral_bins, IdentityEffect, KoopmanSet, ObservableOperator, SpectralBins,
    };

    fn toy_ops() -> OperatorSet {
        let u1 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let koop = KoopmanSet::from_matrices(vec![Mat::identity(2), u1]).unwrap();
        let a = Mat::from_rows(&[vec![2.5, -0.5], vec![-0.5, 2.5]]).unwrap();
        let bins = spectral_bins(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        OperatorSet::new(koop, ObservableOperator::new(a, bins).unwrap()).unwrap()
    }

    fn opts(leads: usize) -> StepOptions {
        StepOptions {
            leads,
            ..Default::default()
        }
    }

    struct Scaled(Mat);

    impl EffectMap for Scaled {
        fn l(&self) -> usize {
            self.0.rows()
        }
        fn matrix(&self, y: &[f64]) -> Result<Mat> {
            Ok(self.0.scaled(y[0]))
        }
    }

    #[test]
    fn equilibrium_state() {
        assert_eq!(init_equilibrium_state(3).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(init_equilibrium_state(0).is_err());
    }

    #[test]
    fn toy_pure_step() {
        let ops = toy_ops();
        let s = 0.5f64.sqrt();
        let xi = PureState::new(vec![s, s]).unwrap();
        let (rec, post, a) = step_pure(&ops, &IdentityEffect(2), &xi, &[0.0], &opts(2)).unwrap();
        assert!((rec.mean[0] - 2.0).abs() < 1e-14);
        assert!((rec.mean[1] - 3.0).abs() < 1e-14);
        assert!(matches!(a, Analysis::Applied { .. }));
        assert!((post.as_slice()[0] - s).abs() < 1e-15 && (post.as_slice()[1] + s).abs() < 1e-15);
        for p in &rec.prob {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn toy_density_trace() {
        let ops = toy_ops();
        let rho = DensityState::new(Mat::diag(&[0.5, 0.5])).unwrap();
        let (rec, _, _) = step_density(&ops, &IdentityEffect(2), &rho, &[0.0], &opts(2)).unwrap();
        assert!((rec.mean[0] - 2.5).abs() < 1e-14);
        // A has eigenvalues 2 and 3 split by the boundary at 2
        assert!((rec.prob[0][0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_effect_keeps_equilibrium() {
        let ops = toy_ops();
        let xi = init_equilibrium_state(2).unwrap();
        let (rec, post, _) = step_pure(&ops, &IdentityEffect(2), &xi, &[0.0], &opts(2)).unwrap();
        assert_eq!(post.as_slice(), &[1.0, 0.0]);
        assert!(rec.mean.iter().all(|m| (m - 2.5).abs() < 1e-14));
    }

    #[test]
    fn zero_validity_is_skipped_or_fatal() {
        let ops = toy_ops();
        let eff = Scaled(Mat::identity(2));
        let xi = init_equilibrium_state(2).unwrap();
        let (_, post, a) = step_pure(&ops, &eff, &xi, &[0.0], &opts(1)).unwrap();
        assert!(matches!(a, Analysis::Skipped { .. }));
        assert_eq!(post.as_slice(), &[1.0, 0.0]);
        let strict = StepOptions {
            strict: true,
            ..opts(1)
        };
        let err = step_pure(&ops, &eff, &xi, &[0.0], &strict).unwrap_err();
        assert!(matches!(err, QmdaError::ZeroValidity { .. }));
        let obs = Mat::from_rows(&[vec![1.0], vec![0.0], vec![1.0]]).unwrap();
        for mode in [Mode::Pure, Mode::Density] {
            let out = run_qmda(&ops, &eff, &obs, mode, &opts(2)).unwrap();
            assert_eq!(out.zero_validity, 1);
            assert_eq!(out.analyses, 2);
        }
    }

    #[test]
    fn leads_beyond_stored_matrices() {
        let ops = toy_ops();
        let xi = init_equilibrium_state(2).unwrap();
        assert!(step_pure(&ops, &IdentityEffect(2), &xi, &[0.0], &opts(3)).is_err());
    }

    #[test]
    fn annihilated_state() {
        let koop = KoopmanSet::from_matrices(vec![Mat::identity(2), Mat::diag(&[0.0, 1.0])]).unwrap();
        let bins = SpectralBins::from_boundaries(vec![]).unwrap();
        let ops = OperatorSet::new(koop, ObservableOperator::new(Mat::identity(2), bins).unwrap()).unwrap();
        let xi = init_equilibrium_state(2).unwrap();
        let err = step_pure(&ops, &IdentityEffect(2), &xi, &[0.0], &opts(2)).unwrap_err();
        assert!(matches!(err, QmdaError::StateAnnihilated { lead: 1, .. }));
    }

    #[test]
    fn empty_observations_give_one_record() {
        let ops = toy_ops();
        let obs = Mat::zeros(0, 1);
        let out = run_qmda(&ops, &IdentityEffect(2), &obs, Mode::Pure, &opts(2)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.analyses, 0);
    }

    /// Random contraction-like Koopman set and observable of size `l`.
    pub(crate) fn random_ops(l: usize, seed: u64) -> OperatorSet {
        let mut mats = vec![Mat::identity(l)];
        for q in 1..4 {
            let mut g = gaussian_matrix(l, l, seed * 10 + q);
            g.set(0, 0, 3.0);
            let mut o = orthonormalize(&g).unwrap();
            o.scale(0.9);
            mats.push(o);
        }
        let g = gaussian_matrix(l, l, seed + 99);
        let mut a = g.add(&g.transpose());
        a.scale(0.5);
        let samples = gaussian_matrix(400, 1, seed + 5).into_vec();
        let bins = spectral_bins(&samples, 5).unwrap();
        OperatorSet::new(
            KoopmanSet::from_matrices(mats).unwrap(),
            ObservableOperator::new(a, bins).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn batched_run_matches_stepping() {
        let ops = random_ops(7, 3);
        let g = gaussian_matrix(7, 7, 4);
        let mut e = g.t_matmul(&g);
        e.scale(1.0 / crate::linalg::spectral_norm(&e).unwrap());
        let eff = Scaled(e);
        let obs = Mat::from_fn(6, 1, |i, _| 0.5 + 0.1 * i as f64);
        let o = opts(4);
        let run = run_qmda(&ops, &eff, &obs, Mode::Pure, &o).unwrap();
        let dens = run_qmda(&ops, &eff, &obs, Mode::Density, &o).unwrap();
        let mut xi = init_equilibrium_state(7).unwrap();
        for n in 0..6 {
            let y = if n + 1 < 6 { obs.row(n + 1) } else { obs.row(0) };
            let (rec, next, _) = step_pure(&ops, &eff, &xi, y, &o).unwrap();
            for (r, other) in [(&run.records[n], "pure"), (&dens.records[n], "density")] {
                for j in 0..4 {
                    assert!((rec.mean[j] - r.mean[j]).abs() < 1e-12, "{other}");
                    assert!((rec.spread[j] - r.spread[j]).abs() < 1e-10, "{other}");
                    for (a, b) in rec.prob[j].iter().zip(&r.prob[j]) {
                        assert!((a - b).abs() < 1e-12, "{other}");
                    }
                }
            }
            xi = next;
        }
    }

    #[test]
    fn density_states_stay_positive() {
        let ops = random_ops(6, 8);
        let g = gaussian_matrix(6, 6, 1);
        let mut e = g.t_matmul(&g);
        e.scale(1.0 / crate::linalg::spectral_norm(&e).unwrap());
        let eff = Scaled(e);
        let mut rho = DensityState::new(Mat::identity(6)).unwrap();
        for n in 0..15 {
            let (rec, next, _) = step_density(&ops, &eff, &rho, &[1.0 + n as f64 * 0.01], &opts(3)).unwrap();
            for p in &rec.prob {
                assert!(p.iter().all(|v| *v >= -1e-12));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!((next.matrix().trace() - 1.0).abs() < 1e-10);
            assert!(sym_eigenvalues(next.matrix()).unwrap()[0] >= -1e-9);
            rho = next;
        }
    }

    #[test]
    fn maximally_mixed_probabilities_count_ranks() {
        let ops = random_ops(6, 2);
        let rho = DensityState::new(Mat::identity(6)).unwrap();
        let rec = forecast_density(&ops, &rho, 0, &opts(1)).unwrap();
        let mut counts = vec![0usize; ops.observable.bins().m()];
        for &b in ops.observable.assignment() {
            counts[b] += 1;
        }
        for (p, c) in rec.prob[0].iter().zip(counts) {
            assert!((p - c as f64 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn densities_divide_interior_bins() {
        let bins = SpectralBins::from_boundaries(vec![0.0, 2.0]).unwrap();
        let rec = ForecastRecord {
            init: 0,
            mean: vec![0.0],
            spread: vec![0.0],
            prob: vec![vec![0.2, 0.5, 0.3]],
        };
        assert_eq!(rec.densities(&bins), vec![vec![0.2, 0.25, 0.3]]);
    }
}
