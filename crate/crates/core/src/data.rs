//! Well observations, CSV ingestion, affine scaling and the time-aware
//! train/validation/test split.
//!
//! CSV schema (UTF-8, header row):
//!
//! | column     | unit                                              |
//! |------------|---------------------------------------------------|
//! | well_id    | opaque                                            |
//! | asset_id   | opaque                                            |
//! | t_days     | days since the first observation of the well      |
//! | choke_pct  | choke opening, percent of full travel             |
//! | p1_bar     | upstream pressure, bar                            |
//! | p2_bar     | downstream pressure, bar                          |
//! | temp_c     | upstream temperature, °C                          |
//! | phi_g/o/w  | composition fractions (sum to one)                |
//! | qg_ksm3d   | gas rate, thousand Sm³/d (liquid equivalents)     |
//! | qo_sm3d    | oil rate, Sm³/d                                   |
//! | qw_sm3d    | water rate, Sm³/d                                 |
//! | source     | `SEP` (well test separator) or `MPFM`             |
//!
//! Gas is reported in thousands of Sm³/d so that all three rates are of
//! comparable magnitude; no further conversion happens at ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::stats::percentile_sorted;

const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: parse failure: {message}")]
    ParseFailure { row: usize, message: String },
    #[error("row {row}: invariant violated: {reason}")]
    InvariantViolation { row: usize, reason: String },
    #[error("development set is empty")]
    EmptyDevelopmentSet,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WellId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetId(pub String);

impl fmt::Display for WellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WellId {
    fn from(s: &str) -> Self {
        WellId(s.to_string())
    }
}

impl From<&str> for AssetId {
    fn from(s: &str) -> Self {
        AssetId(s.to_string())
    }
}

/// Where a rate measurement came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Separator,
    Mpfm,
}

impl Source {
    /// Sample weight used in every loss: multiphase meters are trusted ten
    /// times less than well tests.
    pub fn weight(self) -> f64 {
        match self {
            Source::Separator => 1.0,
            Source::Mpfm => 0.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Separator => "SEP",
            Source::Mpfm => "MPFM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SEP" | "SEPARATOR" => Some(Source::Separator),
            "MPFM" => Some(Source::Mpfm),
            _ => None,
        }
    }
}

/// The explanatory variables of one observation, in physical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// Choke opening as a fraction of full travel.
    pub u: f64,
    pub p1: f64,
    pub p2: f64,
    pub temp: f64,
    pub phi_g: f64,
    pub phi_o: f64,
    pub phi_w: f64,
}

/// One steady-state averaged data point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellObservation {
    pub well_id: WellId,
    pub asset_id: AssetId,
    pub t: f64,
    pub u: f64,
    pub p1: f64,
    pub p2: f64,
    pub temp: f64,
    pub phi_g: f64,
    pub phi_o: f64,
    pub phi_w: f64,
    pub q_g: f64,
    pub q_o: f64,
    pub q_w: f64,
    pub source: Source,
    pub weight: f64,
}

impl WellObservation {
    /// Builds an observation from a total rate and composition so that
    /// `q = Q * phi` holds by construction.
    pub fn from_total(
        well_id: WellId,
        asset_id: AssetId,
        t: f64,
        x: Features,
        total_rate: f64,
        source: Source,
    ) -> Self {
        WellObservation {
            well_id,
            asset_id,
            t,
            u: x.u,
            p1: x.p1,
            p2: x.p2,
            temp: x.temp,
            phi_g: x.phi_g,
            phi_o: x.phi_o,
            phi_w: x.phi_w,
            q_g: total_rate * x.phi_g,
            q_o: total_rate * x.phi_o,
            q_w: total_rate * x.phi_w,
            source,
            weight: source.weight(),
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.q_g + self.q_o + self.q_w
    }

    pub fn features(&self) -> Features {
        Features {
            u: self.u,
            p1: self.p1,
            p2: self.p2,
            temp: self.temp,
            phi_g: self.phi_g,
            phi_o: self.phi_o,
            phi_w: self.phi_w,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.t, self.u, self.p1, self.p2, self.temp, self.phi_g, self.phi_o, self.phi_w, self.q_g,
            self.q_o, self.q_w, self.weight,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.t < 0.0 {
            return Err(format!("negative time {}", self.t));
        }
        if !(0.0..=1.0).contains(&self.u) {
            return Err(format!("choke opening {} outside [0, 1]", self.u));
        }
        for (name, phi) in [("phi_g", self.phi_g), ("phi_o", self.phi_o), ("phi_w", self.phi_w)] {
            if !(0.0..=1.0).contains(&phi) {
                return Err(format!("{name}={phi} outside [0, 1]"));
            }
        }
        let phi_sum = self.phi_g + self.phi_o + self.phi_w;
        if (phi_sum - 1.0).abs() > FRACTION_TOL {
            return Err(format!("composition sums to {phi_sum}"));
        }
        let total = self.total_rate();
        if total <= 0.0 {
            return Err(format!("total rate {total} is not positive"));
        }
        if self.p2 < 0.0 || self.p1 < self.p2 {
            return Err(format!("pressures p1={} p2={} violate p1 >= p2 >= 0", self.p1, self.p2));
        }
        let tol = FRACTION_TOL * total.max(1.0);
        for (name, q, phi) in [
            ("q_g", self.q_g, self.phi_g),
            ("q_o", self.q_o, self.phi_o),
            ("q_w", self.q_w, self.phi_w),
        ] {
            if (q - total * phi).abs() > tol {
                return Err(format!("{name}={q} inconsistent with Q*phi={}", total * phi));
            }
        }
        if self.weight != self.source.weight() {
            return Err(format!("weight {} does not match source {:?}", self.weight, self.source));
        }
        Ok(())
    }
}

/// Column names for CSV ingestion. The default is the documented schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    pub well_id: String,
    pub asset_id: String,
    pub t: String,
    pub choke_pct: String,
    pub p1: String,
    pub p2: String,
    pub temp: String,
    pub phi_g: String,
    pub phi_o: String,
    pub phi_w: String,
    pub q_g: String,
    pub q_o: String,
    pub q_w: String,
    pub source: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            well_id: "well_id".into(),
            asset_id: "asset_id".into(),
            t: "t_days".into(),
            choke_pct: "choke_pct".into(),
            p1: "p1_bar".into(),
            p2: "p2_bar".into(),
            temp: "temp_c".into(),
            phi_g: "phi_g".into(),
            phi_o: "phi_o".into(),
            phi_w: "phi_w".into(),
            q_g: "qg_ksm3d".into(),
            q_o: "qo_sm3d".into(),
            q_w: "qw_sm3d".into(),
            source: "source".into(),
        }
    }
}

impl CsvSchema {
    fn columns(&self) -> [&str; 14] {
        [
            &self.well_id,
            &self.asset_id,
            &self.t,
            &self.choke_pct,
            &self.p1,
            &self.p2,
            &self.temp,
            &self.phi_g,
            &self.phi_o,
            &self.phi_w,
            &self.q_g,
            &self.q_o,
            &self.q_w,
            &self.source,
        ]
    }
}

/// Affine map `(x - shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };
    pub const MIN_SCALE: f64 = 1e-6;

    /// 1st to 99th percentile span, floored so constant columns stay finite.
    pub fn fit(values: &mut [f64]) -> Affine {
        values.sort_by(f64::total_cmp);
        let lo = percentile_sorted(values, 0.01);
        let hi = percentile_sorted(values, 0.99);
        Affine {
            shift: lo,
            scale: (hi - lo).max(Self::MIN_SCALE),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }
}

/// Per-variable affine scaling of the network inputs and the target rate.
/// Composition fractions are already in the unit interval and pass through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub u: Affine,
    pub p1: Affine,
    pub p2: Affine,
    pub temp: Affine,
    pub rate: Affine,
}

/// Number of model input features: [u or psi, p1, p2, T, phi_g, phi_o].
pub const FEATURE_DIM: usize = 6;

impl Scaler {
    /// Scaled network inputs. Water fraction is dropped because the three
    /// fractions sum to one.
    pub fn scale_features(&self, x: &Features) -> [f64; FEATURE_DIM] {
        [
            self.u.apply(x.u),
            self.p1.apply(x.p1),
            self.p2.apply(x.p2),
            self.temp.apply(x.temp),
            x.phi_g,
            x.phi_o,
        ]
    }

    pub fn scale_rate(&self, q: f64) -> f64 {
        self.rate.apply(q)
    }

    pub fn unscale_rate(&self, y: f64) -> f64 {
        self.rate.invert(y)
    }
}

/// Fits the scaler on a set of (development) observations.
pub fn fit_scaler<'a>(observations: impl IntoIterator<Item = &'a WellObservation>) -> Result<Scaler, DataError> {
    let mut cols: [Vec<f64>; 5] = Default::default();
    for o in observations {
        cols[0].push(o.u);
        cols[1].push(o.p1);
        cols[2].push(o.p2);
        cols[3].push(o.temp);
        cols[4].push(o.total_rate());
    }
    if cols[0].is_empty() {
        return Err(DataError::EmptyDevelopmentSet);
    }
    let [u, p1, p2, temp, rate] = cols.map(|mut c| Affine::fit(&mut c));
    Ok(Scaler { u, p1, p2, temp, rate })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Validation => "validation",
            SplitLabel::Test => "test",
            SplitLabel::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitLabel::Train),
            "validation" => Some(SplitLabel::Validation),
            "test" => Some(SplitLabel::Test),
            "unassigned" => Some(SplitLabel::Unassigned),
            _ => None,
        }
    }

    pub fn is_development(self) -> bool {
        matches!(self, SplitLabel::Train | SplitLabel::Validation)
    }
}

/// Test-set selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestSplitRule {
    pub max_gap_days: f64,
    pub frac_cap: f64,
    pub count_cap: usize,
}

impl Default for TestSplitRule {
    fn default() -> Self {
        TestSplitRule {
            max_gap_days: 120.0,
            frac_cap: 0.2,
            count_cap: 500,
        }
    }
}

/// Validation selection rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationRule {
    pub block_days: f64,
    pub min_frac: f64,
    pub max_frac: f64,
}

impl Default for ValidationRule {
    fn default() -> Self {
        ValidationRule {
            block_days: 100.0,
            min_frac: 0.10,
            max_frac: 0.20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSplit {
    pub development: Range<usize>,
    pub test: Range<usize>,
}

/// Chooses the test suffix of one well's time-sorted observation times.
///
/// The suffix is the largest one that satisfies the count caps
/// (`floor(frac_cap * n)` and `count_cap`), lies within `max_gap_days` of the
/// last development point, and starts strictly after it in time.
pub fn split_test(times: &[f64], rule: &TestSplitRule) -> TestSplit {
    let n = times.len();
    let cap = ((rule.frac_cap * n as f64).floor() as usize).min(rule.count_cap);
    let cap = cap.min(n.saturating_sub(1));
    for k in (1..=cap).rev() {
        let dev_end = times[n - k - 1];
        let first_test = times[n - k];
        let last_test = times[n - 1];
        if first_test > dev_end && last_test <= dev_end + rule.max_gap_days {
            return TestSplit {
                development: 0..n - k,
                test: n - k..n,
            };
        }
    }
    TestSplit {
        development: 0..n,
        test: n..n,
    }
}

/// Partitions time-sorted times into blocks spanning at most `block_days`,
/// returned as index ranges.
pub fn time_blocks(times: &[f64], block_days: f64) -> Vec<Range<usize>> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 1..times.len() {
        let gap = times[i] - times[i - 1];
        let span = times[i] - times[start];
        if gap > block_days || span > block_days {
            blocks.push(start..i);
            start = i;
        }
    }
    if !times.is_empty() {
        blocks.push(start..times.len());
    }
    blocks
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSplit {
    /// `true` for development points assigned to validation.
    pub is_validation: Vec<bool>,
    pub fraction: f64,
    /// Set when no block combination reaches the target fraction.
    pub warning: Option<String>,
}

/// Assigns whole time blocks of one well's development data to validation.
///
/// Blocks are visited in a seeded random order and a subset-sum search picks
/// the first reachable validation size inside `[min_frac, max_frac]` of the
/// development count. When no combination fits the window, the largest
/// reachable size below it is used and a warning records the fraction.
pub fn split_train_val(times: &[f64], rule: &ValidationRule, seed: u64) -> ValidationSplit {
    let n = times.len();
    let mut is_validation = vec![false; n];
    if n == 0 {
        return ValidationSplit {
            is_validation,
            fraction: 0.0,
            warning: Some("empty development set".into()),
        };
    }
    let mut blocks = time_blocks(times, rule.block_days);
    let mut rng = seed::rng(seed);
    blocks.shuffle(&mut rng);

    let lo = (rule.min_frac * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let hi = (rule.max_frac * n as f64 + 1e-9).floor() as usize;

    // reach[s] = (block index, previous sum) of the first way to reach s.
    let mut reach: Vec<Option<(usize, usize)>> = vec![None; hi + 1];
    let mut reachable = vec![false; hi + 1];
    reachable[0] = true;
    let mut chosen_sum = None;
    'outer: for (bi, b) in blocks.iter().enumerate() {
        let len = b.len();
        if len > hi {
            continue;
        }
        for s in (0..=hi - len).rev() {
            if reachable[s] && !reachable[s + len] {
                reachable[s + len] = true;
                reach[s + len] = Some((bi, s));
                if s + len >= lo && s + len > 0 {
                    chosen_sum = Some(s + len);
                    break 'outer;
                }
            }
        }
    }
    let mut warning = None;
    let target = match chosen_sum {
        Some(s) => s,
        None => {
            let best = (0..lo.min(hi + 1)).rev().find(|&s| reachable[s]).unwrap_or(0);
            warning = Some(format!(
                "no block combination reaches a validation fraction in [{}, {}]; using {:.3}",
                rule.min_frac,
                rule.max_frac,
                best as f64 / n as f64
            ));
            best
        }
    };
    let mut s = target;
    while s > 0 {
        let (bi, prev) = reach[s].expect("reachable sum has a predecessor");
        for i in blocks[bi].clone() {
            is_validation[i] = true;
        }
        s = prev;
    }
    ValidationSplit {
        is_validation,
        fraction: target as f64 / n as f64,
        warning,
    }
}

/// Observations grouped by well, with split labels and an optional scaler.
#[derive(Clone, Debug)]
pub struct AssetDataset {
    observations: Vec<WellObservation>,
    wells: BTreeMap<WellId, Vec<usize>>,
    scaler: Option<Scaler>,
    splits: Vec<SplitLabel>,
}

/// Outcome of [`AssetDataset::assign_splits`].
#[derive(Clone, Debug, Default)]
pub struct SplitSummary {
    pub warnings: Vec<(WellId, String)>,
}

impl AssetDataset {
    /// Validates every observation and indexes them by well in time order.
    pub fn new(observations: Vec<WellObservation>) -> Result<Self, DataError> {
        for (i, o) in observations.iter().enumerate() {
            o.validate()
                .map_err(|reason| DataError::InvariantViolation { row: i + 1, reason })?;
        }
        let mut wells: BTreeMap<WellId, Vec<usize>> = BTreeMap::new();
        for (i, o) in observations.iter().enumerate() {
            wells.entry(o.well_id.clone()).or_default().push(i);
        }
        for idx in wells.values_mut() {
            idx.sort_by(|&a, &b| observations[a].t.total_cmp(&observations[b].t).then(a.cmp(&b)));
        }
        let n = observations.len();
        Ok(AssetDataset {
            observations,
            wells,
            scaler: None,
            splits: vec![SplitLabel::Unassigned; n],
        })
    }

    pub fn observations(&self) -> &[WellObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs(&self, i: usize) -> &WellObservation {
        &self.observations[i]
    }

    pub fn well_ids(&self) -> impl Iterator<Item = &WellId> {
        self.wells.keys()
    }

    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }

    /// Time-sorted observation indices of one well.
    pub fn well(&self, id: &WellId) -> Option<&[usize]> {
        self.wells.get(id).map(Vec::as_slice)
    }

    pub fn wells(&self) -> &BTreeMap<WellId, Vec<usize>> {
        &self.wells
    }

    pub fn asset_of(&self, id: &WellId) -> Option<&AssetId> {
        self.wells.get(id).map(|idx| &self.observations[idx[0]].asset_id)
    }

    /// Wells grouped by asset, both in sorted order.
    pub fn assets(&self) -> BTreeMap<AssetId, Vec<WellId>> {
        let mut out: BTreeMap<AssetId, Vec<WellId>> = BTreeMap::new();
        for (w, idx) in &self.wells {
            out.entry(self.observations[idx[0]].asset_id.clone())
                .or_default()
                .push(w.clone());
        }
        out
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Scaler) {
        self.scaler = Some(scaler);
    }

    pub fn splits(&self) -> &[SplitLabel] {
        &self.splits
    }

    pub fn label(&self, i: usize) -> SplitLabel {
        self.splits[i]
    }

    /// Indices of one well carrying the given label, in time order.
    pub fn well_indices_with(&self, id: &WellId, label: SplitLabel) -> Vec<usize> {
        self.well(id)
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(|&i| self.splits[i] == label)
            .collect()
    }

    pub fn development_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i].is_development()).collect()
    }

    /// Runs the test and validation split for every well. The validation
    /// stream of each well is seeded by `(seed, well id)`.
    pub fn assign_splits(&mut self, test_rule: &TestSplitRule, val_rule: &ValidationRule, seed: u64) -> SplitSummary {
        let mut summary = SplitSummary::default();
        let mut labels = vec![SplitLabel::Unassigned; self.len()];
        for (w, idx) in &self.wells {
            let times: Vec<f64> = idx.iter().map(|&i| self.observations[i].t).collect();
            let ts = split_test(&times, test_rule);
            for &i in &idx[ts.test.clone()] {
                labels[i] = SplitLabel::Test;
            }
            let dev_times = &times[ts.development.clone()];
            let vs = split_train_val(dev_times, val_rule, seed::derive(seed, &w.0));
            for (k, &i) in idx[ts.development.clone()].iter().enumerate() {
                labels[i] = if vs.is_validation[k] {
                    SplitLabel::Validation
                } else {
                    SplitLabel::Train
                };
            }
            if let Some(msg) = vs.warning {
                log::warn!("well {w}: {msg}");
                summary.warnings.push((w.clone(), msg));
            }
        }
        self.splits = labels;
        summary
    }

    /// Restores labels from a sidecar file (`well_id, t_days, split`). Every
    /// observation must be matched.
    pub fn set_splits_from_records(&mut self, records: &[(WellId, f64, SplitLabel)]) -> Result<(), DataError> {
        let mut by_key: BTreeMap<(WellId, u64), Vec<SplitLabel>> = BTreeMap::new();
        for (w, t, l) in records {
            by_key.entry((w.clone(), t.to_bits())).or_default().push(*l);
        }
        let mut labels = vec![SplitLabel::Unassigned; self.len()];
        for (w, idx) in &self.wells {
            for &i in idx {
                let key = (w.clone(), self.observations[i].t.to_bits());
                let slot = by_key.get_mut(&key).and_then(|v| if v.is_empty() { None } else { Some(v.remove(0)) });
                labels[i] = slot.ok_or_else(|| DataError::InvariantViolation {
                    row: i + 1,
                    reason: format!("no split label for well {w} at t={}", self.observations[i].t),
                })?;
            }
        }
        self.splits = labels;
        Ok(())
    }

    pub fn split_records(&self) -> Vec<(WellId, f64, SplitLabel)> {
        let mut out = Vec::with_capacity(self.len());
        for (w, idx) in &self.wells {
            for &i in idx {
                out.push((w.clone(), self.observations[i].t, self.splits[i]));
            }
        }
        out
    }

    /// Fits the scaler on all development observations of every well.
    pub fn fit_scaler(&mut self) -> Result<Scaler, DataError> {
        let dev = self.development_indices();
        let scaler = fit_scaler(dev.iter().map(|&i| &self.observations[i]))?;
        self.scaler = Some(scaler);
        Ok(scaler)
    }
}

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64, DataError> {
    let v: f64 = s.trim().parse().map_err(|e| DataError::ParseFailure {
        row,
        message: format!("column `{col}`: {e} (value `{s}`)"),
    })?;
    if !v.is_finite() {
        return Err(DataError::ParseFailure {
            row,
            message: format!("column `{col}`: non-finite value `{s}`"),
        });
    }
    Ok(v)
}

/// Reads a dataset CSV. Rows are numbered from 1 (excluding the header).
pub fn load_dataset(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<AssetDataset, DataError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<AssetDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
    let mut pos = [0usize; 14];
    for (slot, name) in pos.iter_mut().zip(schema.columns()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let names = schema.columns();
    let mut observations = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| DataError::ParseFailure { row, message: e.to_string() })?;
        let field = |k: usize| rec.get(pos[k]).unwrap_or("");
        let num = |k: usize| parse_f64(field(k), row, names[k]);
        let source = Source::parse(field(13)).ok_or_else(|| DataError::ParseFailure {
            row,
            message: format!("unknown source `{}`", field(13)),
        })?;
        let o = WellObservation {
            well_id: WellId(field(0).to_string()),
            asset_id: AssetId(field(1).to_string()),
            t: num(2)?,
            u: num(3)? / 100.0,
            p1: num(4)?,
            p2: num(5)?,
            temp: num(6)?,
            phi_g: num(7)?,
            phi_o: num(8)?,
            phi_w: num(9)?,
            q_g: num(10)?,
            q_o: num(11)?,
            q_w: num(12)?,
            source,
            weight: source.weight(),
        };
        o.validate().map_err(|reason| DataError::InvariantViolation { row, reason })?;
        observations.push(o);
    }
    AssetDataset::new(observations)
}

/// Percent text that parses back to exactly `u` after division by 100.
fn choke_pct_text(u: f64) -> String {
    let pct = u * 100.0;
    [pct, pct.next_up(), pct.next_down()]
        .into_iter()
        .find(|p| p.to_string().parse::<f64>().map(|v| v / 100.0) == Ok(u))
        .unwrap_or(pct)
        .to_string()
}

/// Writes observations in the documented schema, grouped by well in time
/// order.
pub fn save_dataset(dataset: &AssetDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    write_dataset(dataset, file)
}

pub fn write_dataset<W: std::io::Write>(dataset: &AssetDataset, writer: W) -> Result<(), DataError> {
    let schema = CsvSchema::default();
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| DataError::Io(e.to_string());
    w.write_record(schema.columns()).map_err(io)?;
    for idx in dataset.wells().values() {
        for &i in idx {
            let o = dataset.obs(i);
            w.write_record([
                o.well_id.0.clone(),
                o.asset_id.0.clone(),
                o.t.to_string(),
                choke_pct_text(o.u),
                o.p1.to_string(),
                o.p2.to_string(),
                o.temp.to_string(),
                o.phi_g.to_string(),
                o.phi_o.to_string(),
                o.phi_w.to_string(),
                o.q_g.to_string(),
                o.q_o.to_string(),
                o.q_w.to_string(),
                o.source.as_str().to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

/// Writes the split sidecar (`well_id, t_days, split`).
pub fn write_splits<W: std::io::Write>(dataset: &AssetDataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| DataError::Io(e.to_string());
    w.write_record(["well_id", "t_days", "split"]).map_err(io)?;
    for (well, t, label) in dataset.split_records() {
        w.write_record([well.0, t.to_string(), label.as_str().to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

pub fn read_splits<R: std::io::Read>(reader: R) -> Result<Vec<(WellId, f64, SplitLabel)>, DataError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| DataError::ParseFailure { row, message: e.to_string() })?;
        let t = parse_f64(rec.get(1).unwrap_or(""), row, "t_days")?;
        let label = SplitLabel::parse(rec.get(2).unwrap_or("")).ok_or_else(|| DataError::ParseFailure {
            row,
            message: format!("unknown split `{}`", rec.get(2).unwrap_or("")),
        })?;
        out.push((WellId(rec.get(0).unwrap_or("").to_string()), t, label));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "well_id,asset_id,t_days,choke_pct,p1_bar,p2_bar,temp_c,phi_g,phi_o,phi_w,qg_ksm3d,qo_sm3d,qw_sm3d,source\n";

    #[test]
    fn loads_single_valid_row() {
        let csv = format!("{HEADER}W1,A1,0,50,100,20,60,0.2,0.5,0.3,10,25,15,SEP\n");
        let ds = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.n_wells(), 1);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.obs(0).total_rate(), 50.0);
        assert_eq!(ds.obs(0).u, 0.5);
        assert_eq!(ds.obs(0).weight, 1.0);
    }

    #[test]
    fn rejects_composition_not_summing_to_one() {
        let csv = format!("{HEADER}W1,A1,0,50,100,20,60,0.2,0.4,0.3,9,18,13.5,SEP\n");
        match read_dataset(csv.as_bytes(), &CsvSchema::default()) {
            Err(DataError::InvariantViolation { row: 1, .. }) => {}
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn reports_missing_column_and_parse_failure() {
        let csv = "well_id,asset_id\nW1,A1\n";
        assert!(matches!(
            read_dataset(csv.as_bytes(), &CsvSchema::default()),
            Err(DataError::MissingColumn(c)) if c == "t_days"
        ));
        let csv = format!("{HEADER}W1,A1,zero,50,100,20,60,0.2,0.5,0.3,10,25,15,SEP\n");
        assert!(matches!(
            read_dataset(csv.as_bytes(), &CsvSchema::default()),
            Err(DataError::ParseFailure { row: 1, .. })
        ));
    }

    #[test]
    fn mpfm_rows_get_reduced_weight() {
        let csv = format!("{HEADER}W1,A1,0,50,100,20,60,0.2,0.5,0.3,10,25,15,MPFM\n");
        let ds = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.obs(0).weight, 0.1);
    }

    #[test]
    fn interleaved_wells_are_indexed_in_time_order() {
        let rows = [
            ("W2", 5.0),
            ("W1", 3.0),
            ("W3", 1.0),
            ("W1", 1.0),
            ("W2", 2.0),
            ("W3", 0.0),
            ("W1", 2.0),
            ("W3", 9.0),
        ];
        let mut csv = HEADER.to_string();
        for (w, t) in rows {
            csv.push_str(&format!("{w},A1,{t},50,100,20,60,0.2,0.5,0.3,10,25,15,SEP\n"));
        }
        let ds = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.n_wells(), 3);
        // Oracle: stable sort of (row index) per well by time.
        for w in ["W1", "W2", "W3"] {
            let mut expected: Vec<(f64, usize)> =
                rows.iter().enumerate().filter(|(_, r)| r.0 == w).map(|(i, r)| (r.1, i)).collect();
            expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let got: Vec<usize> = ds.well(&WellId::from(w)).unwrap().to_vec();
            assert_eq!(got, expected.iter().map(|e| e.1).collect::<Vec<_>>());
        }
    }

    #[test]
    fn scaler_percentiles_match_brute_force() {
        // 0..=100: rank 0.01*100 = 1 -> 1, rank 99 -> 99
        let mut v: Vec<f64> = (0..=100).map(f64::from).collect();
        let a = Affine::fit(&mut v);
        assert_eq!(a.shift, 1.0);
        assert_eq!(a.scale, 98.0);
    }

    #[test]
    fn constant_column_scale_is_floored() {
        let mut v = vec![3.5; 40];
        let a = Affine::fit(&mut v);
        assert_eq!(a.scale, Affine::MIN_SCALE);
        assert!(a.apply(3.5).is_finite());
        assert_eq!(a.apply(3.5), 0.0);
    }

    #[test]
    fn empty_development_set_is_an_error() {
        assert!(matches!(fit_scaler(std::iter::empty()), Err(DataError::EmptyDevelopmentSet)));
    }

    #[test]
    fn test_split_ten_daily_points() {
        // Enumeration oracle: cap = floor(0.2*10) = 2; suffix {8, 9} has
        // dev end 7 and both points within 120 days.
        let times: Vec<f64> = (0..10).map(f64::from).collect();
        let s = split_test(&times, &TestSplitRule::default());
        assert_eq!(s.test, 8..10);
        assert_eq!(s.development, 0..8);
    }

    #[test]
    fn test_split_four_points_is_empty() {
        let times = [0.0, 1.0, 2.0, 3.0];
        let s = split_test(&times, &TestSplitRule::default());
        assert!(s.test.is_empty());
        assert_eq!(s.development, 0..4);
    }

    #[test]
    fn test_split_count_cap_binds() {
        let times: Vec<f64> = (0..3000).map(|i| i as f64 * 0.04).collect();
        let s = split_test(&times, &TestSplitRule::default());
        assert_eq!(s.test.len(), 500);
    }

    #[test]
    fn test_split_respects_gap_after_long_shut_in() {
        // Last two points come ~300 days after the rest.
        let mut times: Vec<f64> = (0..10).map(f64::from).collect();
        times[8] = 300.0;
        times[9] = 301.0;
        let s = split_test(&times, &TestSplitRule::default());
        // k=2: dev end 7, last 301 > 127. k=1: dev end 300, last 301 ok.
        assert_eq!(s.test, 9..10);
    }

    #[test]
    fn test_split_never_separates_equal_times() {
        let times = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 9.0, 9.0];
        let s = split_test(&times, &TestSplitRule::default());
        assert_eq!(s.test, 8..10);
        let times = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 8.0, 9.0];
        let s = split_test(&times, &TestSplitRule::default());
        // k=2 would split the tie at t=8.
        assert_eq!(s.test, 9..10);
    }

    #[test]
    fn single_block_gives_empty_validation_with_warning() {
        let times: Vec<f64> = (0..10).map(f64::from).collect();
        let v = split_train_val(&times, &ValidationRule::default(), 3);
        assert_eq!(v.fraction, 0.0);
        assert!(v.warning.is_some());
        assert!(v.is_validation.iter().all(|b| !b));
    }

    #[test]
    fn equal_blocks_hit_window_for_all_seeds() {
        // 10 blocks of 5 points separated by 200 days.
        let times: Vec<f64> = (0..10)
            .flat_map(|b| (0..5).map(move |i| b as f64 * 200.0 + i as f64))
            .collect();
        for seed in 0..100 {
            let v = split_train_val(&times, &ValidationRule::default(), seed);
            assert!((0.10..=0.20).contains(&v.fraction), "seed {seed}: {}", v.fraction);
            assert!(v.warning.is_none());
        }
    }

    #[test]
    fn validation_assignment_is_deterministic_per_seed() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 2.5).collect();
        let a = split_train_val(&times, &ValidationRule::default(), 11);
        let b = split_train_val(&times, &ValidationRule::default(), 11);
        assert_eq!(a, b);
        let blocks = time_blocks(&times, 100.0);
        // whole blocks only
        for b in blocks {
            let first = a.is_validation[b.start];
            assert!(a.is_validation[b].iter().all(|&x| x == first));
        }
    }

    #[test]
    fn blocks_respect_span_and_gap() {
        let times = [0.0, 50.0, 100.0, 101.0, 300.0, 301.0];
        let b = time_blocks(&times, 100.0);
        assert_eq!(b, vec![0..3, 3..4, 4..6]);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let csv = format!(
            "{HEADER}W1,A1,0,50,100,20,60,0.2,0.5,0.3,10,25,15,SEP\nW1,A1,3.5,51.25,99,21,61,0,1,0,0,40,0,MPFM\nW2,A2,1,12.5,300,40,70,0.5,0.25,0.25,20,10,10,MPFM\n"
        );
        let ds = read_dataset(csv.as_bytes(), &CsvSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(ds.observations(), back.observations());
    }

    proptest! {
        #[test]
        fn scaler_round_trip(shift in -1e3f64..1e3, scale in 1e-3f64..1e3, x in -1e4f64..1e4) {
            let a = Affine { shift, scale };
            let back = a.invert(a.apply(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn test_split_caps_hold(n in 1usize..3000, spacing in 0.01f64..5.0) {
            let times: Vec<f64> = (0..n).map(|i| i as f64 * spacing).collect();
            let s = split_test(&times, &TestSplitRule::default());
            let k = s.test.len();
            prop_assert!(k <= ((0.2 * n as f64).floor() as usize).min(500));
            prop_assert_eq!(s.test.end, n);
            if k > 0 {
                let dev_end = times[s.development.end - 1];
                prop_assert!(times[s.test.start] > dev_end);
                prop_assert!(times[n - 1] <= dev_end + 120.0);
            }
        }
    }
}
