//! Config-driven orchestration: data generation, training, forecasting and
//! evaluation, with the on-disk layout
//!
//! ```text
//! <output>/model/model.qmda        basis and operators
//! <output>/model/config.toml       effective config
//! <output>/model/train_report.json tuning and solver diagnostics
//! <output>/runs/<id>/              records, report and skill files
//! ```
//!
//! Everything except `timing.json` is a deterministic function of the inputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::artifact::{sha256_file, sha256_hex, Artifact};
use crate::assimilation::{run_qmda, ForecastRecord, Mode, RunOutput, StepOptions};
use crate::basis::{compute_basis, BasisDiagnostics, BasisParams, KernelBasis};
use crate::dataset::{delay_embed, load_series, save_series, SeriesSchema, TrajectorySeries};
use crate::error::{QmdaError, Result};
use crate::kernels::{BandwidthFunction, KernelParams, TuningResult};
use crate::l96::{generate_dataset, L96Config, Variant};
use crate::linalg::Mat;
use crate::metrics::{skill, Climatology, SkillCurves, TrainStats, AC_THRESHOLDS};
use crate::operators::{
    multiplication_operator, observation_kernel, spectral_bins, BumpKernel, EffectFeatureMap,
    KoopmanSet, ObservableOperator, OperatorSet, SpectralBins,
};

const MODEL_FILE: &str = "model.qmda";
const RECORDS_FILE: &str = "records.qmda";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub f_column: String,
    pub y_columns: Option<Vec<String>>,
    /// Replace every column by its anomaly from a periodic climatology fitted
    /// on the training series.
    pub anomaly_period: Option<usize>,
    /// Phase of the first test sample within the period.
    pub test_phase: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: "data/train.csv".into(),
            test: "data/test.csv".into(),
            f_column: "f".into(),
            y_columns: None,
            anomaly_period: None,
            test_phase: 0,
        }
    }
}

impl DataConfig {
    fn schema(&self) -> SeriesSchema {
        SeriesSchema {
            f_column: self.f_column.clone(),
            y_columns: self.y_columns.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        // 7000 initializations plus room for 100 leads and the delay window
        GenerateConfig {
            train_samples: 40_000,
            test_samples: 7_124,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub delays: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { delays: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorConfig {
    /// Number of spectral bins M.
    pub bins: usize,
    /// Use `(F ψ)^{1/2}` instead of `F ψ^{1/2}` for the effects.
    pub exact_sqrt: bool,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            bins: 32,
            exact_sqrt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub leads: usize,
    pub obs_lead: usize,
    pub mode: Mode,
    /// Number of initializations N̂; defaults to as many as the test data
    /// can verify.
    pub cycles: Option<usize>,
    pub validity_threshold: f64,
    pub strict: bool,
    /// Also write the bin probabilities as CSV (they are always in
    /// `records.qmda`).
    pub write_probabilities: bool,
    /// Run directory name; defaults to a hash of the run inputs.
    pub run_id: Option<String>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        let step = StepOptions::default();
        ForecastConfig {
            leads: step.leads,
            obs_lead: step.obs_lead,
            mode: Mode::Pure,
            cycles: None,
            validity_threshold: step.validity_threshold,
            strict: step.strict,
            write_probabilities: false,
            run_id: None,
        }
    }
}

impl ForecastConfig {
    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            leads: self.leads,
            obs_lead: self.obs_lead,
            validity_threshold: self.validity_threshold,
            strict: self.strict,
        }
    }

    /// Largest shift the model has to store.
    fn j_max(&self) -> usize {
        self.leads.saturating_sub(1).max(self.obs_lead)
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub l96: L96Config,
    pub generate: GenerateConfig,
    pub embedding: EmbeddingConfig,
    pub kernel: KernelParams,
    pub basis: BasisParams,
    pub operators: OperatorConfig,
    pub forecast: ForecastConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| QmdaError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QmdaError::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        // relative data paths are taken from the config file's directory, and
        // made absolute so that the echoed config works from anywhere
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
        let dir = std::path::absolute(parent.unwrap_or(Path::new(".")))
            .map_err(|e| QmdaError::io(path, e))?;
        for p in [&mut c.data.train, &mut c.data.test] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| QmdaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.basis.l == 0 {
            return Err(QmdaError::Config("basis.l must be positive".into()));
        }
        if self.operators.bins == 0 {
            return Err(QmdaError::Config("operators.bins must be positive".into()));
        }
        if self.forecast.leads == 0 || self.forecast.obs_lead == 0 {
            return Err(QmdaError::Config(
                "forecast.leads and forecast.obs_lead must be positive".into(),
            ));
        }
        if self.data.anomaly_period == Some(0) {
            return Err(QmdaError::Config("data.anomaly_period must be positive".into()));
        }
        Ok(())
    }
}

/// Writes `data.train` and `data.test` from the Lorenz 96 settings.
pub fn cmd_generate(config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    config.l96.validate()?;
    let g = &config.generate;
    for (path, variant, samples) in [
        (&config.data.train, Variant::Train, g.train_samples),
        (&config.data.test, Variant::Test, g.test_samples),
    ] {
        let series = generate_dataset(&config.l96, variant, samples)?;
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        save_series(path, &series)?;
    }
    Ok((config.data.train.clone(), config.data.test.clone()))
}

/// Training-time settings and results stored with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub delays: usize,
    pub kernel: KernelParams,
    pub basis: BasisParams,
    pub operators: OperatorConfig,
    pub j_max: usize,
    pub n: usize,
    pub l: usize,
    pub d: usize,
    pub dt: f64,
    pub train_stats: TrainStats,
    pub f_min: f64,
    pub f_max: f64,
    pub anomaly_period: Option<usize>,
    pub train_sha256: String,
    pub obs_knn: usize,
    pub obs_epsilon: f64,
    pub obs_bandwidth_tuning: TuningResult,
    pub obs_kernel_tuning: TuningResult,
}

/// A trained model: basis, operators and observation kernel.
#[derive(Clone, Debug)]
pub struct Model {
    pub meta: ModelMeta,
    pub basis: KernelBasis,
    pub ops: OperatorSet,
    pub kernel: BumpKernel,
    /// Climatologies of the observation columns and of `f`, if anomalies
    /// are used.
    pub climatology: Option<(Vec<Climatology>, Climatology)>,
}

impl Model {
    pub fn effect_map(&self) -> Result<EffectFeatureMap<'_, &BumpKernel>> {
        Ok(EffectFeatureMap::new(&self.basis, &self.kernel)?.with_exact_sqrt(self.meta.operators.exact_sqrt))
    }

    pub fn to_artifact(&self) -> Result<Artifact> {
        let meta = serde_json::to_value(&self.meta).map_err(|e| QmdaError::Artifact(e.to_string()))?;
        let mut a = Artifact::new("model", meta);
        a.push_mat("phi", self.basis.phi())?;
        a.push_vec("sigma", self.basis.sigma())?;
        a.push_mat("a", self.ops.observable.a())?;
        a.push_vec("bin_boundaries", self.ops.observable.bins().boundaries())?;
        for (q, u) in self.ops.koopman.matrices().iter().enumerate().skip(1) {
            a.push_mat(&format!("u{q}"), u)?;
        }
        let bw = self.kernel.bandwidth();
        a.push_mat("obs_points", bw.points())?;
        a.push_vec("obs_r2", bw.r2())?;
        a.push_vec("obs_values", bw.values())?;
        if let Some((cy, cf)) = &self.climatology {
            let mut m = Mat::zeros(cy.len() + 1, cf.period);
            for (i, c) in cy.iter().chain([cf]).enumerate() {
                m.row_mut(i).copy_from_slice(&c.means);
            }
            a.push_mat("climatology", &m)?;
        }
        Ok(a)
    }

    pub fn from_artifact(a: &Artifact) -> Result<Self> {
        if a.kind() != "model" {
            return Err(QmdaError::Artifact(format!("expected a model, found {}", a.kind())));
        }
        let meta: ModelMeta = a.meta_as()?;
        if meta.format_version != FORMAT_VERSION {
            return Err(QmdaError::Artifact(format!(
                "unsupported model format {}",
                meta.format_version
            )));
        }
        let basis = KernelBasis::new(a.mat("phi")?, a.vec("sigma")?)?;
        let mut mats = vec![Mat::identity(meta.l)];
        for q in 1..=meta.j_max {
            mats.push(a.mat(&format!("u{q}"))?);
        }
        let bins = SpectralBins::from_boundaries(a.vec("bin_boundaries")?)?;
        let ops = OperatorSet::new(
            KoopmanSet::from_matrices(mats)?,
            ObservableOperator::new(a.mat("a")?, bins)?,
        )?;
        let bw = BandwidthFunction::from_parts(
            a.mat("obs_points")?,
            a.vec("obs_r2")?,
            a.vec("obs_values")?,
            meta.obs_knn,
            meta.obs_bandwidth_tuning.clone(),
        )?;
        let kernel = BumpKernel::from_parts(bw, meta.obs_epsilon, meta.obs_kernel_tuning.clone());
        let climatology = match meta.anomaly_period {
            Some(period) => {
                let m = a.mat("climatology")?;
                let clim = |i: usize| Climatology {
                    period,
                    means: m.row(i).to_vec(),
                };
                Some(((0..meta.d).map(clim).collect(), clim(meta.d)))
            }
            None => None,
        };
        Ok(Model {
            meta,
            basis,
            ops,
            kernel,
            climatology,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::load(&dir.join(MODEL_FILE))?)
    }
}

/// Replaces each column by its anomaly, with phase `n + phase`.
fn apply_anomalies(
    series: &TrajectorySeries,
    clim: &(Vec<Climatology>, Climatology),
    phase: usize,
) -> Result<TrajectorySeries> {
    let (cy, cf) = clim;
    let d = series.dim();
    let y = Mat::from_fn(series.len(), d, |n, i| series.y().get(n, i) - cy[i].at(n + phase));
    let f = (0..series.len()).map(|n| series.f()[n] - cf.at(n + phase)).collect();
    TrajectorySeries::new(series.dt(), y, f)
}

fn fit_climatology(series: &TrajectorySeries, period: usize) -> Result<(Vec<Climatology>, Climatology)> {
    let n = series.len();
    let cy = (0..series.dim())
        .map(|i| Climatology::fit(&series.y().col(i), period, 0..n))
        .collect::<Result<Vec<_>>>()?;
    let cf = Climatology::fit(series.f(), period, 0..n)?;
    Ok((cy, cf))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub n: usize,
    pub l: usize,
    pub d: usize,
    pub train_stats: TrainStats,
    pub sigma_head: Vec<f64>,
    pub sigma_last: f64,
    pub basis: BasisDiagnostics,
    pub bin_boundaries: Vec<f64>,
    pub obs_epsilon: f64,
    pub obs_m_star: f64,
    pub train_sha256: String,
}

fn step<T>(step: usize, name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| QmdaError::TrainingStep {
        step,
        name,
        source: Box::new(e),
    })
}

/// Runs training in memory. Returns the model, its report, and per-step
/// timings in seconds.
pub fn train(config: &RunConfig) -> Result<(Model, TrainReport, Vec<(String, f64)>)> {
    config.validate()?;
    let mut timing = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timing: &mut Vec<(String, f64)>| {
        timing.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let train_sha256 = step(1, "load", sha256_file(&config.data.train))?;
    let raw = step(1, "load", load_series(&config.data.train, &config.data.schema()))?;
    let climatology = match config.data.anomaly_period {
        Some(p) => Some(step(1, "anomalies", fit_climatology(&raw, p))?),
        None => None,
    };
    let series = match &climatology {
        Some(c) => step(1, "anomalies", apply_anomalies(&raw, c, 0))?,
        None => raw,
    };
    let emb = step(1, "delay embedding", delay_embed(&series, config.embedding.delays))?;
    lap("embed", &mut timing);

    let (basis, diag) = step(2, "bandwidth and basis", compute_basis(emb.z(), &config.kernel, &config.basis))?;
    lap("basis", &mut timing);

    let bins = step(3, "spectral bins", spectral_bins(emb.f(), config.operators.bins))?;
    let a = step(4, "observable", multiplication_operator(&basis, emb.f()))?;
    let observable = step(4, "observable", ObservableOperator::new(a, bins))?;
    lap("observable", &mut timing);

    let j_max = config.forecast.j_max();
    let koopman = step(5, "shift operators", KoopmanSet::compute(&basis, j_max))?;
    let ops = step(5, "shift operators", OperatorSet::new(koopman, observable))?;
    lap("koopman", &mut timing);

    let kernel = step(6, "observation kernel", observation_kernel(emb.y_center(), &config.kernel))?;
    step(7, "effect map", EffectFeatureMap::new(&basis, &kernel).map(|_| ()))?;
    lap("observation_kernel", &mut timing);

    let f = emb.f();
    let train_stats = TrainStats::from_samples(f)?;
    let meta = ModelMeta {
        format_version: FORMAT_VERSION,
        delays: config.embedding.delays,
        kernel: config.kernel,
        basis: config.basis.clone(),
        operators: config.operators.clone(),
        j_max,
        n: basis.n(),
        l: basis.l(),
        d: series.dim(),
        dt: series.dt(),
        train_stats,
        f_min: f.iter().copied().fold(f64::INFINITY, f64::min),
        f_max: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        anomaly_period: config.data.anomaly_period,
        train_sha256: train_sha256.clone(),
        obs_knn: kernel.bandwidth().knn(),
        obs_epsilon: kernel.epsilon(),
        obs_bandwidth_tuning: kernel.bandwidth().tuning().clone(),
        obs_kernel_tuning: kernel.tuning().clone(),
    };
    let report = TrainReport {
        n: meta.n,
        l: meta.l,
        d: meta.d,
        train_stats,
        sigma_head: basis.sigma().iter().take(10).copied().collect(),
        sigma_last: *basis.sigma().last().expect("basis is non-empty"),
        basis: diag,
        bin_boundaries: ops.observable.bins().boundaries().to_vec(),
        obs_epsilon: kernel.epsilon(),
        obs_m_star: kernel.tuning().m_star,
        train_sha256,
    };
    Ok((
        Model {
            meta,
            basis,
            ops,
            kernel,
            climatology,
        },
        report,
        timing,
    ))
}

/// Trains and writes `<output>/model/`. Returns the model directory.
pub fn cmd_train(config: &RunConfig, output: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let (model, report, mut timing) = train(config)?;
    let dir = output.join("model");
    create_dir(&dir)?;
    model.to_artifact()?.save(&dir.join(MODEL_FILE))?;
    write_text(&dir.join("config.toml"), &config.to_toml()?)?;
    write_json(&dir.join("train_report.json"), &report)?;
    timing.push(("total".into(), start.elapsed().as_secs_f64()));
    write_timing(&dir.join("timing.json"), &timing)?;
    Ok(dir)
}

/// Test observations and verification values prepared for a model.
pub struct TestData {
    pub observations: Mat,
    pub truth: Vec<f64>,
    pub sha256: String,
}

pub fn load_test_data(config: &RunConfig, model: &Model) -> Result<TestData> {
    let sha256 = sha256_file(&config.data.test)?;
    let raw = load_series(&config.data.test, &config.data.schema())?;
    if raw.dim() != model.meta.d {
        return Err(QmdaError::DimensionMismatch(format!(
            "test data has {} observation columns, model was trained on {}",
            raw.dim(),
            model.meta.d
        )));
    }
    let series = match &model.climatology {
        Some(c) => apply_anomalies(&raw, c, config.data.test_phase)?,
        None => raw,
    };
    let emb = delay_embed(&series, model.meta.delays)?;
    Ok(TestData {
        observations: emb.y_center().clone(),
        truth: emb.f().to_vec(),
        sha256,
    })
}

fn cycle_count(config: &RunConfig, available: usize) -> Result<usize> {
    let leads = config.forecast.leads;
    if available < leads {
        return Err(QmdaError::InsufficientData(format!(
            "{available} test samples after embedding cannot verify {leads} leads"
        )));
    }
    let max = available - leads + 1;
    match config.forecast.cycles {
        Some(c) if c == 0 || c > max => Err(QmdaError::Config(format!(
            "forecast.cycles must be in 1..={max} for this test set, got {c}"
        ))),
        Some(c) => Ok(c),
        None => Ok(max),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub mode: Mode,
    pub cycles: usize,
    pub leads: usize,
    pub obs_lead: usize,
    pub bins: usize,
    pub dt: f64,
    pub analyses: usize,
    pub zero_validity: usize,
    pub model_sha256: String,
    pub test_sha256: String,
}

fn run_id(config: &RunConfig, model_sha: &str, test_sha: &str) -> Result<String> {
    if let Some(id) = &config.forecast.run_id {
        return Ok(id.clone());
    }
    let mut f = config.forecast.clone();
    f.write_probabilities = false;
    let key = serde_json::to_string(&(model_sha, test_sha, &f))
        .map_err(|e| QmdaError::Config(e.to_string()))?;
    Ok(sha256_hex(key.as_bytes())[..12].to_string())
}

pub fn records_artifact(report: &RunReport, out: &RunOutput) -> Result<Artifact> {
    let meta = serde_json::to_value(report).map_err(|e| QmdaError::Artifact(e.to_string()))?;
    let mut a = Artifact::new("records", meta);
    let n = out.records.len();
    let j = report.leads;
    let m = report.bins;
    let flat = |f: &dyn Fn(&ForecastRecord) -> &Vec<f64>| -> Vec<f64> {
        out.records.iter().flat_map(|r| f(r).iter().copied()).collect()
    };
    a.push("mean", vec![n, j], flat(&|r| &r.mean))?;
    a.push("spread", vec![n, j], flat(&|r| &r.spread))?;
    let prob = out
        .records
        .iter()
        .flat_map(|r| r.prob.iter().flat_map(|p| p.iter().copied()))
        .collect();
    a.push("prob", vec![n, j, m], prob)?;
    Ok(a)
}

pub fn records_from_artifact(a: &Artifact) -> Result<(RunReport, Vec<ForecastRecord>)> {
    if a.kind() != "records" {
        return Err(QmdaError::Artifact(format!("expected records, found {}", a.kind())));
    }
    let report: RunReport = a.meta_as()?;
    let mean = a.mat("mean")?;
    let spread = a.mat("spread")?;
    let prob = a.vec_nd("prob")?;
    let (j, m) = (report.leads, report.bins);
    let records = (0..mean.rows())
        .map(|n| ForecastRecord {
            init: n,
            mean: mean.row(n).to_vec(),
            spread: spread.row(n).to_vec(),
            prob: (0..j)
                .map(|k| prob[(n * j + k) * m..(n * j + k + 1) * m].to_vec())
                .collect(),
        })
        .collect();
    Ok((report, records))
}

/// Runs the forecast–analysis cycle on the test data and writes
/// `<output>/runs/<id>/`. Returns the run directory.
pub fn cmd_forecast(config: &RunConfig, output: &Path) -> Result<PathBuf> {
    let start = Instant::now();
    let model_dir = output.join("model");
    let model_sha = sha256_file(&model_dir.join(MODEL_FILE))?;
    let model = Model::load(&model_dir)?;
    let test = load_test_data(config, &model)?;
    let load_time = start.elapsed().as_secs_f64();

    let cycles = cycle_count(config, test.truth.len())?;
    let obs = Mat::from_vec(
        cycles,
        test.observations.cols(),
        test.observations.as_slice()[..cycles * test.observations.cols()].to_vec(),
    )?;
    let effect = model.effect_map()?;
    let clock = Instant::now();
    let out = run_qmda(&model.ops, &effect, &obs, config.forecast.mode, &config.forecast.step_options())?;
    let run_time = clock.elapsed().as_secs_f64();

    let id = run_id(config, &model_sha, &test.sha256)?;
    let report = RunReport {
        run_id: id.clone(),
        mode: config.forecast.mode,
        cycles,
        leads: config.forecast.leads,
        obs_lead: config.forecast.obs_lead,
        bins: model.ops.observable.bins().m(),
        dt: model.meta.dt,
        analyses: out.analyses,
        zero_validity: out.zero_validity,
        model_sha256: model_sha,
        test_sha256: test.sha256,
    };
    let dir = output.join("runs").join(&id);
    create_dir(&dir)?;
    records_artifact(&report, &out)?.save(&dir.join(RECORDS_FILE))?;
    write_json(&dir.join("report.json"), &report)?;
    write_text(&dir.join("config.toml"), &config.to_toml()?)?;
    write_record_csv(&dir.join("mean.csv"), &out.records, |r| &r.mean)?;
    write_record_csv(&dir.join("spread.csv"), &out.records, |r| &r.spread)?;
    write_bins_csv(&dir.join("bins.csv"), model.ops.observable.bins())?;
    if config.forecast.write_probabilities {
        write_prob_csv(&dir.join("prob.csv"), &out.records, model.ops.observable.bins())?;
    }
    write_timing(
        &dir.join("timing.json"),
        &[
            ("load".into(), load_time),
            ("assimilation".into(), run_time),
            ("total".into(), start.elapsed().as_secs_f64()),
        ],
    )?;
    Ok(dir)
}

#[derive(Clone, Debug, Serialize)]
pub struct SkillSummary {
    pub run_id: String,
    pub cycles: usize,
    pub train_stats: TrainStats,
    pub nrmse_0: f64,
    pub ac_0: f64,
    /// Lead time (model units) at which AC first drops below each threshold.
    pub ac_crossings: Vec<(f64, Option<f64>)>,
    pub zero_validity: usize,
}

/// Verifies a run against the test data. `run_dir` defaults to the run the
/// same config would produce.
pub fn cmd_evaluate(config: &RunConfig, output: &Path, run_dir: Option<&Path>) -> Result<(PathBuf, SkillCurves)> {
    let model_dir = output.join("model");
    let model = Model::load(&model_dir)?;
    let test = load_test_data(config, &model)?;
    let dir = match run_dir {
        Some(d) => d.to_path_buf(),
        None => {
            let model_sha = sha256_file(&model_dir.join(MODEL_FILE))?;
            output.join("runs").join(run_id(config, &model_sha, &test.sha256)?)
        }
    };
    let (report, records) = records_from_artifact(&Artifact::load(&dir.join(RECORDS_FILE))?)?;
    let curves = skill(&records, &test.truth, model.meta.train_stats)?;
    let dt = report.dt;
    let lead_time = |j: usize| (j as f64 * dt * 1e9).round() / 1e9;
    let mut csv = String::from("lead_time,nrmse,ac,est_err\n");
    for j in 0..curves.leads() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            lead_time(j),
            curves.nrmse[j],
            curves.ac[j],
            curves.est_err[j]
        ));
    }
    write_text(&dir.join("skill.csv"), &csv)?;
    let summary = SkillSummary {
        run_id: report.run_id.clone(),
        cycles: report.cycles,
        train_stats: curves.train,
        nrmse_0: curves.nrmse[0],
        ac_0: curves.ac[0],
        ac_crossings: AC_THRESHOLDS
            .iter()
            .map(|&t| (t, curves.ac_crossing(t).map(lead_time)))
            .collect(),
        zero_validity: report.zero_validity,
    };
    write_json(&dir.join("skill.json"), &summary)?;
    Ok((dir, curves))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| QmdaError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| QmdaError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| QmdaError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| QmdaError::Artifact(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn write_timing(path: &Path, timing: &[(String, f64)]) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> =
        timing.iter().map(|(k, v)| (k.clone(), (*v).into())).collect();
    write_json(path, &map)
}

fn write_record_csv(path: &Path, records: &[ForecastRecord], field: impl Fn(&ForecastRecord) -> &Vec<f64>) -> Result<()> {
    let leads = records.first().map_or(0, |r| field(r).len());
    let mut s = String::from("init");
    for j in 0..leads {
        s.push_str(&format!(",lead{j}"));
    }
    s.push('\n');
    for r in records {
        s.push_str(&r.init.to_string());
        for v in field(r) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    write_text(path, &s)
}

fn write_bins_csv(path: &Path, bins: &SpectralBins) -> Result<()> {
    let mut s = String::from("bin,lower,upper\n");
    for m in 0..bins.m() {
        let (lo, hi) = bins.interval(m);
        s.push_str(&format!("{m},{lo},{hi}\n"));
    }
    write_text(path, &s)
}

fn write_prob_csv(path: &Path, records: &[ForecastRecord], bins: &SpectralBins) -> Result<()> {
    let mut s = String::from("init,lead,bin,probability,density\n");
    for r in records {
        for (j, (p, dens)) in r.prob.iter().zip(r.densities(bins)).enumerate() {
            for (m, (v, d)) in p.iter().zip(dens).enumerate() {
                s.push_str(&format!("{},{j},{m},{v},{d}\n", r.init));
            }
        }
    }
    write_text(path, &s)
}
