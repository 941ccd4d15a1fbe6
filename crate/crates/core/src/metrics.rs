//! Forecast verification and monthly anomalies.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::assimilation::ForecastRecord;
use crate::error::{QmdaError, Result};

/// Anomaly-correlation levels commonly taken to mark loss of skill.
pub const AC_THRESHOLDS: [f64; 2] = [0.6, 0.5];

/// Mean and (population) variance of the training observable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub mean: f64,
    pub var: f64,
}

impl TrainStats {
    pub fn from_samples(f: &[f64]) -> Result<Self> {
        if f.is_empty() {
            return Err(QmdaError::Empty("training observable".into()));
        }
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(TrainStats { mean, var })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillCurves {
    pub train: TrainStats,
    pub nrmse: Vec<f64>,
    pub ac: Vec<f64>,
    /// Mean forecast spread per lead, in units of the training standard
    /// deviation so that it compares with NRMSE.
    pub est_err: Vec<f64>,
}

impl SkillCurves {
    pub fn leads(&self) -> usize {
        self.nrmse.len()
    }

    /// First lead at which AC drops below `level`.
    pub fn ac_crossing(&self, level: f64) -> Option<usize> {
        self.ac.iter().position(|&a| a < level)
    }
}

/// NRMSE and AC per lead, normalized by training statistics. Record `n`
/// at lead `j` is verified against `truth[init + j]`.
pub fn skill(records: &[ForecastRecord], truth: &[f64], train: TrainStats) -> Result<SkillCurves> {
    if !(train.var > 0.0) {
        return Err(QmdaError::InvalidParameter(format!(
            "training variance must be positive, got {}",
            train.var
        )));
    }
    let first = records.first().ok_or_else(|| QmdaError::Empty("forecast records".into()))?;
    let leads = first.mean.len();
    let mut err2 = vec![0.0; leads];
    let mut cross = vec![0.0; leads];
    let mut spread = vec![0.0; leads];
    for rec in records {
        if rec.mean.len() != leads || rec.spread.len() != leads {
            return Err(QmdaError::DimensionMismatch(format!(
                "record {} has {} leads, expected {leads}",
                rec.init,
                rec.mean.len()
            )));
        }
        let last = rec.init + leads - 1;
        if last >= truth.len() {
            return Err(QmdaError::InsufficientData(format!(
                "record {} needs truth index {last}, have {}",
                rec.init,
                truth.len()
            )));
        }
        for j in 0..leads {
            let t = truth[rec.init + j];
            let e = rec.mean[j] - t;
            err2[j] += e * e;
            cross[j] += (rec.mean[j] - train.mean) * (t - train.mean);
            spread[j] += rec.spread[j];
        }
    }
    let n = records.len() as f64;
    let norm = n * train.var;
    Ok(SkillCurves {
        train,
        nrmse: err2.iter().map(|s| (s / norm).sqrt()).collect(),
        ac: cross.iter().map(|s| s / norm).collect(),
        est_err: spread.iter().map(|s| s / (n * train.var.sqrt())).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub period: usize,
    /// Mean per phase `n mod period`.
    pub means: Vec<f64>,
}

impl Climatology {
    /// Phase means over `range`.
    pub fn fit(series: &[f64], period: usize, range: Range<usize>) -> Result<Self> {
        if period == 0 {
            return Err(QmdaError::InvalidParameter("period must be positive".into()));
        }
        if range.end > series.len() || range.start > range.end {
            return Err(QmdaError::InvalidParameter(format!(
                "training range {range:?} outside series of length {}",
                series.len()
            )));
        }
        let mut sums = vec![0.0; period];
        let mut counts = vec![0usize; period];
        for n in range {
            sums[n % period] += series[n];
            counts[n % period] += 1;
        }
        if let Some(m) = counts.iter().position(|&c| c == 0) {
            return Err(QmdaError::InsufficientData(format!("no training samples for month {}", m + 1)));
        }
        Ok(Climatology {
            period,
            means: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        })
    }

    pub fn at(&self, n: usize) -> f64 {
        self.means[n % self.period]
    }

    pub fn anomalies(&self, series: &[f64]) -> Vec<f64> {
        series.iter().enumerate().map(|(n, v)| v - self.at(n)).collect()
    }

    pub fn restore(&self, anomalies: &[f64]) -> Vec<f64> {
        anomalies.iter().enumerate().map(|(n, v)| v + self.at(n)).collect()
    }
}

/// Anomalies of `series` relative to the climatology fitted on `range`.
pub fn monthly_anomaly(series: &[f64], period: usize, range: Range<usize>) -> Result<(Vec<f64>, Climatology)> {
    if series.len() < period {
        return Err(QmdaError::InsufficientData(format!(
            "series of length {} is shorter than one period",
            series.len()
        )));
    }
    let clim = Climatology::fit(series, period, range)?;
    Ok((clim.anomalies(series), clim))
}
