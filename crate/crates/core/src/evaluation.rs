//! Test-set metrics: percentage errors, trimmed MAPE and RMSE, the upstream
//! pressure sensitivity score, and their aggregation into report tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AssetDataset, AssetId, Features, SplitLabel, WellId};
use crate::model::{ModelError, ModelKind};
use crate::stats::{mean, Summary};
use crate::synth::ChokePhysics;
use crate::training::TrainedModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("true rate must be positive, got {0}")]
    NonPositiveTruth(f64),
    #[error("no errors to aggregate")]
    EmptyErrors,
    #[error("no model covers well `{0}`")]
    NoModelForWell(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("prediction failed: {0}")]
    Prediction(String),
    #[error("writing {path}: {message}")]
    Write { path: String, message: String },
}

/// Upstream pressure perturbation used by the sensitivity score, in bar.
pub const SENSITIVITY_DP1: f64 = 10.0;

/// Anything that predicts total flow in physical units for a well.
pub trait FlowModel: Sync {
    fn label(&self) -> String;
    fn predict(&self, well: &WellId, xs: &[Features]) -> Result<Vec<f64>, EvalError>;
}

/// All trained members of one model type, e.g. one STL model per well or
/// one MTL-Asset model per asset.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub kind: ModelKind,
    pub label: String,
    pub members: Vec<TrainedModel>,
}

impl ModelSet {
    pub fn member_for(&self, well: &WellId) -> Option<&TrainedModel> {
        self.members.iter().find(|m| m.covers(well))
    }

    pub fn parameter_count(&self) -> usize {
        self.members.iter().map(TrainedModel::parameter_count).sum()
    }
}

impl FlowModel for ModelSet {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn predict(&self, well: &WellId, xs: &[Features]) -> Result<Vec<f64>, EvalError> {
        let m = self.member_for(well).ok_or_else(|| EvalError::NoModelForWell(well.0.clone()))?;
        Ok(m.predict_well(well, xs)?)
    }
}

/// The generating physics of each well, used as a reference model.
#[derive(Clone, Debug)]
pub struct OracleModel {
    pub physics: BTreeMap<WellId, ChokePhysics>,
}

impl FlowModel for OracleModel {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, well: &WellId, xs: &[Features]) -> Result<Vec<f64>, EvalError> {
        let p = self.physics.get(well).ok_or_else(|| EvalError::NoModelForWell(well.0.clone()))?;
        xs.iter()
            .map(|x| p.rate(x).map_err(|e| EvalError::Prediction(e.to_string())))
            .collect()
    }
}

/// `100 (q_hat - q) / q`.
pub fn percentage_error(q_hat: f64, q: f64) -> Result<f64, EvalError> {
    if !(q > 0.0) {
        return Err(EvalError::NonPositiveTruth(q));
    }
    Ok(100.0 * (q_hat - q) / q)
}

/// Number of largest values dropped from `n`: `ceil(0.05 n)`, but at least
/// one value is always kept.
pub fn trim_count(n: usize) -> usize {
    (n as f64 * 0.05).ceil().min(n.saturating_sub(1) as f64) as usize
}

/// Sorted absolute errors with the largest `trim_count` removed.
pub fn trimmed_abs(errors: &[f64]) -> Result<Vec<f64>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    let mut a: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    a.sort_by(f64::total_cmp);
    a.truncate(a.len() - trim_count(a.len()));
    Ok(a)
}

pub fn trimmed_mape(errors: &[f64]) -> Result<f64, EvalError> {
    Ok(mean(&trimmed_abs(errors)?))
}

pub fn trimmed_rmse(errors: &[f64]) -> Result<f64, EvalError> {
    let a = trimmed_abs(errors)?;
    Ok((a.iter().map(|e| e * e).sum::<f64>() / a.len() as f64).sqrt())
}

/// Per-point score: 0 when raising `p1` by [`SENSITIVITY_DP1`] strictly
/// increases the prediction, 1 otherwise.
pub fn sensitivity_points(model: &dyn FlowModel, well: &WellId, xs: &[Features]) -> Result<Vec<f64>, EvalError> {
    let base = model.predict(well, xs)?;
    let bumped: Vec<Features> = xs.iter().map(|x| Features { p1: x.p1 + SENSITIVITY_DP1, ..*x }).collect();
    let up = model.predict(well, &bumped)?;
    Ok(base.iter().zip(&up).map(|(b, u)| if u - b > 0.0 { 0.0 } else { 1.0 }).collect())
}

pub fn sensitivity_score(model: &dyn FlowModel, well: &WellId, xs: &[Features]) -> Result<f64, EvalError> {
    if xs.is_empty() {
        return Err(EvalError::EmptyErrors);
    }
    Ok(mean(&sensitivity_points(model, well, xs)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub well: WellId,
    pub asset: AssetId,
    pub t: f64,
    pub q: f64,
    pub q_hat: f64,
    pub e: f64,
    /// Whole weeks since the last development point of the well.
    pub week: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellMetrics {
    pub well: WellId,
    pub asset: AssetId,
    pub n: usize,
    pub mape: f64,
    pub rmse: f64,
    pub sensitivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub parameters: Option<usize>,
    pub points: Vec<PointError>,
    pub wells: Vec<WellMetrics>,
}

impl ModelReport {
    pub fn mean_mape(&self) -> f64 {
        mean(&self.wells.iter().map(|w| w.mape).collect::<Vec<_>>())
    }

    pub fn mean_rmse(&self) -> f64 {
        mean(&self.wells.iter().map(|w| w.rmse).collect::<Vec<_>>())
    }

    pub fn mean_sensitivity(&self) -> f64 {
        mean(&self.wells.iter().map(|w| w.sensitivity).collect::<Vec<_>>())
    }
}

/// Test points of one well and the time of its last development point.
pub fn test_points(ds: &AssetDataset, well: &WellId) -> (Vec<usize>, Option<f64>) {
    let idx = ds.well(well).unwrap_or(&[]);
    let last_dev = idx
        .iter()
        .filter(|&&i| ds.label(i).is_development())
        .map(|&i| ds.obs(i).t)
        .reduce(f64::max);
    (ds.well_indices_with(well, SplitLabel::Test), last_dev)
}

/// Scores one model on the test points of `wells` (wells without test
/// points are skipped).
pub fn evaluate_model(model: &dyn FlowModel, ds: &AssetDataset, wells: &[WellId]) -> Result<ModelReport, EvalError> {
    let mut points = Vec::new();
    let mut metrics = Vec::new();
    for well in wells {
        let (idx, last_dev) = test_points(ds, well);
        if idx.is_empty() {
            continue;
        }
        let xs: Vec<Features> = idx.iter().map(|&i| ds.obs(i).features()).collect();
        let pred = model.predict(well, &xs)?;
        let mut errors = Vec::with_capacity(idx.len());
        let asset = ds.obs(idx[0]).asset_id.clone();
        for (&i, &q_hat) in idx.iter().zip(&pred) {
            let o = ds.obs(i);
            let q = o.total_rate();
            let e = percentage_error(q_hat, q)?;
            errors.push(e);
            let week = last_dev.map_or(0, |d| ((o.t - d).max(0.0) / 7.0).floor() as u32);
            points.push(PointError { well: well.clone(), asset: asset.clone(), t: o.t, q, q_hat, e, week });
        }
        metrics.push(WellMetrics {
            well: well.clone(),
            asset,
            n: idx.len(),
            mape: trimmed_mape(&errors)?,
            rmse: trimmed_rmse(&errors)?,
            sensitivity: sensitivity_score(model, well, &xs)?,
        });
    }
    Ok(ModelReport { label: model.label(), parameters: None, points, wells: metrics })
}

/// Results of several models on the same test data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub models: Vec<ModelReport>,
}

/// One summary row of an aggregate table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub label: String,
    pub summary: Summary,
}

impl EvaluationReport {
    pub fn model(&self, label: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.label == label)
    }

    /// Absolute percentage error over all test points of all wells.
    pub fn overall(&self) -> Vec<SummaryRow> {
        self.models
            .iter()
            .filter_map(|m| {
                let a: Vec<f64> = m.points.iter().map(|p| p.e.abs()).collect();
                Summary::of(&a).map(|summary| SummaryRow { group: "all".into(), label: m.label.clone(), summary })
            })
            .collect()
    }

    /// Per-well trimmed MAPE and RMSE, summarized over wells.
    pub fn by_well(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for (metric, pick) in [("mape", (|w: &WellMetrics| w.mape) as fn(&WellMetrics) -> f64), ("rmse", |w| w.rmse)] {
            for m in &self.models {
                let v: Vec<f64> = m.wells.iter().map(pick).collect();
                if let Some(summary) = Summary::of(&v) {
                    out.push(SummaryRow { group: metric.into(), label: m.label.clone(), summary });
                }
            }
        }
        out
    }

    /// Mean trimmed MAPE of the wells of each asset.
    pub fn by_asset(&self) -> Vec<(String, BTreeMap<AssetId, f64>)> {
        self.models
            .iter()
            .map(|m| {
                let mut groups: BTreeMap<AssetId, Vec<f64>> = BTreeMap::new();
                for w in &m.wells {
                    groups.entry(w.asset.clone()).or_default().push(w.mape);
                }
                (m.label.clone(), groups.into_iter().map(|(a, v)| (a, mean(&v))).collect())
            })
            .collect()
    }

    /// Absolute percentage error grouped by weeks since the last
    /// development point.
    pub fn by_week(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for m in &self.models {
            let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            for p in &m.points {
                groups.entry(p.week).or_default().push(p.e.abs());
            }
            for (week, v) in groups {
                let summary = Summary::of(&v).expect("non-empty group");
                out.push(SummaryRow { group: week.to_string(), label: m.label.clone(), summary });
            }
        }
        out
    }

    pub fn sensitivity(&self) -> Vec<(String, f64)> {
        self.models.iter().map(|m| (m.label.clone(), m.mean_sensitivity())).collect()
    }

    /// Writes one CSV per table into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<Vec<String>, EvalError> {
        std::fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
        let mut files = Vec::new();
        let summary_header = ["group", "model", "n", "mean", "p05", "p25", "p50", "p75", "p95"];
        let summary_rows = |rows: Vec<SummaryRow>| -> Vec<Vec<String>> {
            rows.into_iter()
                .map(|r| {
                    let s = r.summary;
                    vec![r.group, r.label, s.n.to_string()]
                        .into_iter()
                        .chain([s.mean, s.p05, s.p25, s.p50, s.p75, s.p95].map(fmt))
                        .collect()
                })
                .collect()
        };
        write_csv(dir, "error_overview.csv", &summary_header, summary_rows(self.overall()), &mut files)?;
        write_csv(dir, "error_by_well.csv", &summary_header, summary_rows(self.by_well()), &mut files)?;
        write_csv(dir, "error_by_week.csv", &summary_header, summary_rows(self.by_week()), &mut files)?;
        let asset_rows = self
            .by_asset()
            .into_iter()
            .flat_map(|(label, m)| m.into_iter().map(move |(a, v)| vec![label.clone(), a.0, fmt(v)]))
            .collect();
        write_csv(dir, "error_by_asset.csv", &["model", "asset", "mean_mape"], asset_rows, &mut files)?;
        let sens = self.sensitivity().into_iter().map(|(l, s)| vec![l, fmt(s)]).collect();
        write_csv(dir, "sensitivity.csv", &["model", "mean_sensitivity"], sens, &mut files)?;
        let wells = self
            .models
            .iter()
            .flat_map(|m| {
                m.wells.iter().map(|w| {
                    vec![
                        m.label.clone(),
                        w.well.0.clone(),
                        w.asset.0.clone(),
                        w.n.to_string(),
                        fmt(w.mape),
                        fmt(w.rmse),
                        fmt(w.sensitivity),
                    ]
                })
            })
            .collect();
        write_csv(dir, "well_metrics.csv", &["model", "well_id", "asset_id", "n", "mape", "rmse", "sensitivity"], wells, &mut files)?;
        Ok(files)
    }
}

/// Shortest round-trip text of a float, so reruns produce identical files.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Write { path: path.display().to_string(), message: e.to_string() }
}

/// Writes a header and rows to `dir/name` and records the file name.
pub fn write_csv(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: Vec<Vec<String>>,
    files: &mut Vec<String>,
) -> Result<(), EvalError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| write_err(&path, e))?;
    w.write_record(header).map_err(|e| write_err(&path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| write_err(&path, e))?;
    }
    w.flush().map_err(|e| write_err(&path, e))?;
    files.push(name.to_string());
    Ok(())
}
