//! Tidy CSV files behind the figures: data exploration, split timelines,
//! error development, pressure sweeps, and task-parameter views.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::data::{AssetDataset, Features, Scaler, SplitLabel, WellId, FEATURE_DIM};
use crate::evaluation::{fmt, write_csv, EvalError, EvaluationReport, FlowModel};
use crate::model::NetworkParams;
use crate::stats::{percentile_sorted, sorted_copy};

/// Upstream pressure offsets (bar) of the sensitivity sweeps.
pub const SWEEP_OFFSETS: [f64; 9] = [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
/// Test points per well in a sensitivity sweep.
pub const SWEEP_POINTS: usize = 30;
/// Adjusted choke values of the task-parameter response curves.
pub const PSI_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
/// Values per task dimension in the response curves.
pub const BETA_LEVELS: usize = 5;

/// Choke against upstream pressure, pressure distribution per well, and
/// the split timeline.
pub fn write_data_plots(ds: &AssetDataset, dir: &Path) -> Result<Vec<String>, EvalError> {
    let mut files = Vec::new();
    let mut scatter = Vec::new();
    let mut boxes = Vec::new();
    let mut timeline = Vec::new();
    for (well, idx) in ds.wells() {
        let asset = ds.asset_of(well).expect("indexed well").0.clone();
        for &i in idx {
            let o = ds.obs(i);
            scatter.push(vec![well.0.clone(), asset.clone(), fmt(o.t), fmt(o.u), fmt(o.p1)]);
            timeline.push(vec![well.0.clone(), fmt(o.t), ds.label(i).as_str().to_string()]);
        }
        let p1 = sorted_copy(&idx.iter().map(|&i| ds.obs(i).p1).collect::<Vec<_>>());
        let mut row = vec![well.0.clone(), asset.clone(), p1.len().to_string(), fmt(p1[0])];
        row.extend([0.05, 0.25, 0.5, 0.75, 0.95].map(|p| fmt(percentile_sorted(&p1, p))));
        row.push(fmt(p1[p1.len() - 1]));
        boxes.push(row);
    }
    write_csv(dir, "choke_vs_pressure.csv", &["well_id", "asset_id", "t_days", "u", "p1"], scatter, &mut files)?;
    write_csv(
        dir,
        "pressure_by_well.csv",
        &["well_id", "asset_id", "n", "min", "p05", "p25", "p50", "p75", "p95", "max"],
        boxes,
        &mut files,
    )?;
    write_csv(dir, "split_timeline.csv", &["well_id", "t_days", "split"], timeline, &mut files)?;
    Ok(files)
}

/// Absolute error of every test point with its week index.
pub fn write_error_points(report: &EvaluationReport, dir: &Path) -> Result<Vec<String>, EvalError> {
    let mut files = Vec::new();
    let rows = report
        .models
        .iter()
        .flat_map(|m| {
            m.points
                .iter()
                .map(|p| vec![m.label.clone(), p.well.0.clone(), fmt(p.t), p.week.to_string(), fmt(p.e.abs())])
        })
        .collect();
    write_csv(dir, "error_vs_week.csv", &["model", "well_id", "t_days", "week", "abs_error"], rows, &mut files)?;
    Ok(files)
}

/// Evenly spaced subset of at most `k` entries, keeping the order.
fn spread<T: Copy>(v: &[T], k: usize) -> Vec<T> {
    if v.len() <= k {
        return v.to_vec();
    }
    (0..k).map(|i| v[i * (v.len() - 1) / (k - 1)]).collect()
}

/// Predictions on up to [`SWEEP_POINTS`] test points per well while the
/// upstream pressure is shifted by each of [`SWEEP_OFFSETS`].
pub fn write_sensitivity_sweeps(
    models: &[&dyn FlowModel],
    ds: &AssetDataset,
    wells: &[WellId],
    dir: &Path,
) -> Result<Vec<String>, EvalError> {
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for well in wells {
        let idx = spread(&ds.well_indices_with(well, SplitLabel::Test), SWEEP_POINTS);
        if idx.is_empty() {
            continue;
        }
        for m in models {
            for &off in &SWEEP_OFFSETS {
                let xs: Vec<Features> = idx
                    .iter()
                    .map(|&i| {
                        let x = ds.obs(i).features();
                        Features { p1: x.p1 + off, ..x }
                    })
                    .collect();
                let q = m.predict(well, &xs)?;
                for ((&i, x), q) in idx.iter().zip(&xs).zip(q) {
                    rows.push(vec![
                        m.label(),
                        well.0.clone(),
                        fmt(ds.obs(i).t),
                        fmt(off),
                        fmt(x.p1),
                        fmt(q),
                        fmt(ds.obs(i).total_rate()),
                    ]);
                }
            }
        }
    }
    write_csv(
        dir,
        "sensitivity_sweep.csv",
        &["model", "well_id", "t_days", "p1_offset", "p1", "q_hat", "q_observed"],
        rows,
        &mut files,
    )?;
    Ok(files)
}

/// One point of a task-parameter response curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponsePoint {
    pub beta: Vec<f64>,
    pub psi: f64,
    pub q: f64,
}

/// Network output while the adjusted choke sweeps [`PSI_GRID`] and the
/// first one or two task dimensions take [`BETA_LEVELS`] values spanning
/// the learned range. Other inputs are held at `base` (scaled) and unused
/// task dimensions at their mean.
pub fn beta_response(params: &NetworkParams, scaler: &Scaler, base: &[f64; FEATURE_DIM]) -> Vec<ResponsePoint> {
    let m = params.spec.beta_dim();
    if m == 0 {
        return Vec::new();
    }
    let levels = |d: usize| -> Vec<f64> {
        let col = params.beta.column(d);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        (0..BETA_LEVELS).map(|k| lo + (hi - lo) * k as f64 / (BETA_LEVELS - 1) as f64).collect()
    };
    let means: Vec<f64> = (0..m).map(|d| params.beta.column(d).mean().unwrap_or(0.0)).collect();
    let b1 = levels(0);
    let b2 = if m > 1 { levels(1) } else { vec![f64::NAN] };
    let mut out = Vec::new();
    for &v1 in &b1 {
        for &v2 in &b2 {
            let mut beta = means.clone();
            beta[0] = v1;
            if m > 1 {
                beta[1] = v2;
            }
            for &psi in &PSI_GRID {
                let mut z = *base;
                z[0] = psi;
                let q = params.shared_forward(&z, &beta).expect("dimensions match");
                out.push(ResponsePoint { beta: beta.clone(), psi, q: scaler.unscale_rate(q) });
            }
        }
    }
    out
}

/// Median scaled development features, used as the fixed inputs of the
/// response curves.
pub fn median_features(ds: &AssetDataset, scaler: &Scaler) -> [f64; FEATURE_DIM] {
    let dev = ds.development_indices();
    let rows: Vec<[f64; FEATURE_DIM]> = dev.iter().map(|&i| scaler.scale_features(&ds.obs(i).features())).collect();
    std::array::from_fn(|k| {
        let col = sorted_copy(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
        if col.is_empty() { 0.0 } else { percentile_sorted(&col, 0.5) }
    })
}

/// Task-parameter scatter and response curves of one multi-task network.
pub fn write_beta_plots(
    label: &str,
    params: &NetworkParams,
    scaler: &Scaler,
    ds: &AssetDataset,
    dir: &Path,
) -> Result<Vec<String>, EvalError> {
    let mut files = Vec::new();
    let m = params.spec.beta_dim();
    let assets: BTreeMap<WellId, String> =
        params.wells.iter().map(|w| (w.clone(), ds.asset_of(w).map(|a| a.0.clone()).unwrap_or_default())).collect();
    let mut header = vec!["model".to_string(), "well_id".into(), "asset_id".into()];
    header.extend((1..=m).map(|d| format!("beta_{d}")));
    let scatter = params
        .wells
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let mut r = vec![label.to_string(), w.0.clone(), assets[w].clone()];
            r.extend(params.beta.row(j).iter().map(|&b| fmt(b)));
            r
        })
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(dir, "beta_scatter.csv", &h, scatter, &mut files)?;
    let base = median_features(ds, scaler);
    let curve = beta_response(params, scaler, &base)
        .into_iter()
        .map(|p| {
            vec![
                label.to_string(),
                fmt(p.beta[0]),
                p.beta.get(1).map_or(String::new(), |&b| fmt(b)),
                fmt(p.psi),
                fmt(p.q),
            ]
        })
        .collect();
    write_csv(dir, "beta_response.csv", &["model", "beta_1", "beta_2", "psi", "q_hat"], curve, &mut files)?;
    Ok(files)
}

/// Scaled feature matrix of the given observations.
pub fn scaled_matrix(ds: &AssetDataset, scaler: &Scaler, idx: &[usize]) -> Array2<f64> {
    let flat: Vec<f64> = idx.iter().flat_map(|&i| scaler.scale_features(&ds.obs(i).features())).collect();
    Array2::from_shape_vec((idx.len(), FEATURE_DIM), flat).expect("rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Affine;
    use crate::model::{ModelKind, ModelSpec};

    fn scaler() -> Scaler {
        Scaler { u: Affine::IDENTITY, p1: Affine::IDENTITY, p2: Affine::IDENTITY, temp: Affine::IDENTITY, rate: Affine::IDENTITY }
    }

    #[test]
    fn response_grid_has_one_row_per_point() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 2);
        let mut p = NetworkParams::init(&spec, vec![WellId::from("a"), WellId::from("b")], 2).unwrap();
        p.beta = ndarray::array![[-0.5, 0.2], [0.5, 0.8]];
        let rows = beta_response(&p, &scaler(), &[0.5; 6]);
        assert_eq!(rows.len(), BETA_LEVELS * BETA_LEVELS * PSI_GRID.len());
        assert!(rows.iter().all(|r| r.q.is_finite()));
        assert_eq!(rows[0].beta, vec![-0.5, 0.2]);
        assert_eq!(rows.last().unwrap().beta, vec![0.5, 0.8]);
        assert_eq!(rows[0].psi, 0.1);
    }

    #[test]
    fn single_task_dimension_sweeps_one_axis() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 1);
        let p = NetworkParams::init(&spec, vec![WellId::from("a")], 2).unwrap();
        assert_eq!(beta_response(&p, &scaler(), &[0.5; 6]).len(), BETA_LEVELS * PSI_GRID.len());
    }

    #[test]
    fn spread_keeps_ends() {
        let v: Vec<usize> = (0..100).collect();
        let s = spread(&v, 30);
        assert_eq!(s.len(), 30);
        assert_eq!((s[0], s[29]), (0, 99));
        assert_eq!(spread(&v[..3], 30), vec![0, 1, 2]);
    }
}
