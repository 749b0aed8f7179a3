//! Experiment orchestration: which models to train, where artifacts go, how
//! an interrupted run resumes, and how a bundle is evaluated.
//!
//! Bundle layout:
//!
//! ```text
//! <out>/manifest.json        config hash, per-model status and timings
//! <out>/splits.csv           split label of every observation
//! <out>/checkpoints/<name>.json
//! <out>/traces/<name>.csv    per-epoch training and validation loss
//! <out>/search/<name>.json   grid search trials
//! <out>/reports/*.csv        tables and summary.json
//! <out>/plots/*.csv          figure data
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_splits, write_splits, AssetDataset, TestSplitRule, ValidationRule, WellId};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, fmt, write_csv, EvaluationReport, FlowModel, ModelSet};
use crate::model::{ModelKind, Variant};
use crate::plots;
use crate::seed;
use crate::training::{fit_model, FitRequest, GbtGrid, ModelBody, NetworkGrid, TrainedModel, MIN_EPOCHS};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub test: TestSplitRule,
    #[serde(default)]
    pub validation: ValidationRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    #[serde(default = "NetworkGrid::stl_default")]
    pub stl: NetworkGrid,
    #[serde(default = "NetworkGrid::mtl_default")]
    pub mtl: NetworkGrid,
    #[serde(default)]
    pub gbt: GbtGrid,
}

impl Default for Grids {
    fn default() -> Self {
        Grids { stl: NetworkGrid::stl_default(), mtl: NetworkGrid::mtl_default(), gbt: GbtGrid::default() }
    }
}

/// Everything that determines the trained models of a run, apart from the
/// data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "all_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_search_epochs")]
    pub search_epochs: usize,
    #[serde(default = "default_final_epochs")]
    pub final_epochs: usize,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub grids: Grids,
}

fn default_seed() -> u64 {
    1
}

fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_search_epochs() -> usize {
    3000
}

fn default_final_epochs() -> usize {
    4000
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            models: all_models(),
            search_epochs: default_search_epochs(),
            final_epochs: default_final_epochs(),
            splits: SplitConfig::default(),
            grids: Grids::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; errors carry the line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models requested".into()));
        }
        if self.search_epochs < MIN_EPOCHS || self.final_epochs < MIN_EPOCHS {
            return Err(Error::Config(format!("epoch counts must be >= {MIN_EPOCHS}")));
        }
        let g = &self.grids;
        for (name, grid) in [("stl", &g.stl), ("mtl", &g.mtl)] {
            if grid.layers.is_empty() || grid.hidden.is_empty() || grid.lambda.is_empty() {
                return Err(Error::Config(format!("grids.{name}: layers, hidden and lambda must be non-empty")));
            }
            if let Some(l) = grid.layers.iter().find(|&&l| l < 4 || l % 2 != 0) {
                return Err(Error::Config(format!("grids.{name}: layers must be even and >= 4, got {l}")));
            }
        }
        if g.mtl.task_dim.is_empty() || g.mtl.lambda_task.is_empty() {
            return Err(Error::Config("grids.mtl: task_dim and lambda_task must be non-empty".into()));
        }
        if g.gbt.max_depth.is_empty() || g.gbt.lambda.is_empty() || g.gbt.gamma.is_empty() {
            return Err(Error::Config("grids.gbt: max_depth, lambda and gamma must be non-empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// One model to fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub name: String,
    pub kind: ModelKind,
    pub variant: Variant,
    pub wells: Vec<WellId>,
    pub seed: u64,
}

/// Seed of one model, independent of which other models are trained.
pub fn job_seed(root: u64, kind: ModelKind, variant: Variant, group: &str) -> u64 {
    seed::derive(seed::derive(seed::derive(root, kind.tag()), variant.tag()), group)
}

fn job(root: u64, kind: ModelKind, variant: Variant, group: &str, wells: Vec<WellId>) -> Job {
    let name = match variant {
        Variant::Full => format!("{}_{group}", kind.tag()),
        v => format!("{}-{}_{group}", kind.tag(), v.tag()),
    };
    Job { name, kind, variant, wells, seed: job_seed(root, kind, variant, group) }
}

/// Per-well single-task models, one model per asset, and one universal
/// model, in a fixed order.
pub fn plan_jobs(config: &ExperimentConfig, ds: &AssetDataset) -> Vec<Job> {
    let mut out = Vec::new();
    for &kind in &ModelKind::ALL {
        if !config.models.contains(&kind) {
            continue;
        }
        match kind {
            ModelKind::StlGbt | ModelKind::StlAnn => {
                let v = if kind == ModelKind::StlAnn { Variant::NoBetaNoGamma } else { Variant::Full };
                for w in ds.well_ids() {
                    let mut j = job(config.seed, kind, v, &w.0, vec![w.clone()]);
                    j.name = format!("{}_{}", kind.tag(), w.0);
                    out.push(j);
                }
            }
            ModelKind::MtlAsset => {
                for (a, wells) in ds.assets() {
                    out.push(job(config.seed, kind, Variant::Full, &a.0, wells));
                }
            }
            ModelKind::MtlUniversal => {
                out.push(job(config.seed, kind, Variant::Full, "all", ds.well_ids().cloned().collect()));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub kind: ModelKind,
    pub variant: Variant,
    pub wells: Vec<WellId>,
    pub status: Status,
    pub checkpoint: String,
    pub parameters: Option<usize>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Run record. Wall-clock timings live only here, so every other file of a
/// bundle is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub package_version: String,
    pub config: ExperimentConfig,
    pub models: BTreeMap<String, ModelEntry>,
    pub artifacts: Vec<String>,
    pub failures: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    fn new(config: &ExperimentConfig) -> Self {
        Manifest {
            config_hash: config.hash(),
            seed: config.seed,
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            models: BTreeMap::new(),
            artifacts: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::serde(&path, e))
    }

    /// Writes through a temporary file so a crash never leaves a truncated
    /// manifest behind.
    pub fn save(&self, bundle: &Path) -> Result<()> {
        let path = bundle.join(MANIFEST_FILE);
        let tmp = bundle.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn completed(&self) -> usize {
        self.models.values().filter(|m| m.status == Status::Done).count()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::serde(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_checkpoint(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::serde(path, e))
}

fn write_trace(path: &Path, m: &TrainedModel) -> Result<()> {
    let mut text = String::from("epoch,train_loss,valid_loss\n");
    for (i, t) in m.train_trace.iter().enumerate() {
        let v = m.valid_trace.get(i).map_or(String::new(), |v| fmt(*v));
        text.push_str(&format!("{i},{},{v}\n", fmt(*t)));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Labels every observation and fits the scaler on development data.
pub fn prepare_dataset(ds: &mut AssetDataset, config: &ExperimentConfig) -> Result<()> {
    let summary = ds.assign_splits(&config.splits.test, &config.splits.validation, seed::derive(config.seed, "splits"));
    for (w, msg) in summary.warnings {
        log::warn!("{w}: {msg}");
    }
    ds.fit_scaler()?;
    Ok(())
}

/// Fits one model and writes its checkpoint, loss trace and search record.
pub fn run_job(job: &Job, config: &ExperimentConfig, ds: &AssetDataset, bundle: &Path) -> Result<ModelEntry> {
    let scaler = *ds.scaler().ok_or_else(|| Error::Config("dataset has no scaler".into()))?;
    let req = FitRequest {
        kind: job.kind,
        variant: job.variant,
        name: job.name.clone(),
        wells: job.wells.clone(),
        dataset: ds,
        scaler,
        search_epochs: config.search_epochs,
        final_epochs: config.final_epochs,
        seed: job.seed,
    };
    let grid = if job.kind == ModelKind::StlAnn { &config.grids.stl } else { &config.grids.mtl };
    let start = Instant::now();
    let out = fit_model(&req, grid, &config.grids.gbt)?;
    let seconds = start.elapsed().as_secs_f64();
    let checkpoint = format!("checkpoints/{}.json", job.name);
    write_json(&bundle.join(&checkpoint), &out.model)?;
    write_trace(&bundle.join(format!("traces/{}.csv", job.name)), &out.model)?;
    write_json(&bundle.join(format!("search/{}.json", job.name)), &out.search)?;
    Ok(ModelEntry {
        kind: job.kind,
        variant: job.variant,
        wells: job.wells.clone(),
        status: Status::Done,
        checkpoint,
        parameters: Some(out.model.parameter_count()),
        seconds,
        error: None,
    })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub bundle: PathBuf,
    pub manifest: Manifest,
    pub report: EvaluationReport,
    /// Models that failed to train or evaluate.
    pub failures: Vec<String>,
}

impl ExperimentOutcome {
    pub fn all_trained(&self) -> bool {
        self.manifest.models.values().all(|m| m.status == Status::Done)
    }
}

/// Trains every planned model into `bundle` and evaluates the result.
/// Models already marked done in an existing manifest with the same config
/// hash are skipped, so an interrupted run can be resumed.
pub fn run_experiment(config: &ExperimentConfig, mut ds: AssetDataset, bundle: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    for d in ["checkpoints", "traces", "search"] {
        create_dir(&bundle.join(d))?;
    }
    prepare_dataset(&mut ds, config)?;
    let splits_path = bundle.join("splits.csv");
    let f = std::fs::File::create(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    write_splits(&ds, f)?;

    let mut manifest = match Manifest::load(bundle) {
        Ok(m) if m.config_hash == config.hash() => m,
        _ => Manifest::new(config),
    };
    manifest.models.retain(|_, e| e.status == Status::Done && bundle.join(&e.checkpoint).exists());
    manifest.failures.clear();
    manifest.save(bundle)?;

    let jobs = plan_jobs(config, &ds);
    let pending: Vec<&Job> = jobs.iter().filter(|j| !manifest.models.contains_key(&j.name)).collect();
    log::info!("{} models planned, {} already done", jobs.len(), jobs.len() - pending.len());
    let shared = Mutex::new(manifest);
    pending.par_iter().for_each(|job| {
        let entry = run_job(job, config, &ds, bundle).unwrap_or_else(|e| {
            log::error!("{}: {e}", job.name);
            ModelEntry {
                kind: job.kind,
                variant: job.variant,
                wells: job.wells.clone(),
                status: Status::Failed,
                checkpoint: format!("checkpoints/{}.json", job.name),
                parameters: None,
                seconds: 0.0,
                error: Some(e.to_string()),
            }
        });
        let mut m = shared.lock().expect("manifest lock");
        m.models.insert(job.name.clone(), entry);
        if let Err(e) = m.save(bundle) {
            log::error!("saving manifest: {e}");
        }
    });
    let mut manifest = shared.into_inner().expect("manifest lock");
    let failed: Vec<String> = manifest
        .models
        .iter()
        .filter(|(_, e)| e.status == Status::Failed)
        .map(|(n, e)| format!("{n}: {}", e.error.clone().unwrap_or_default()))
        .collect();
    manifest.failures = failed;
    manifest.save(bundle)?;

    let eval = evaluate_bundle(bundle, ds)?;
    let mut manifest = Manifest::load(bundle)?;
    manifest.artifacts = eval.artifacts.clone();
    manifest.artifacts.extend(["manifest.json".to_string(), "splits.csv".to_string()]);
    for name in manifest.models.iter().filter(|(_, e)| e.status == Status::Done).map(|(n, _)| n.clone()).collect::<Vec<_>>() {
        manifest.artifacts.push(format!("checkpoints/{name}.json"));
        manifest.artifacts.push(format!("traces/{name}.csv"));
        manifest.artifacts.push(format!("search/{name}.json"));
    }
    manifest.artifacts.sort();
    manifest.save(bundle)?;
    let mut failures = manifest.failures.clone();
    failures.extend(eval.failures);
    Ok(ExperimentOutcome { bundle: bundle.to_path_buf(), manifest, report: eval.report, failures })
}

/// Label of a model group in reports.
pub fn group_label(kind: ModelKind, variant: Variant) -> String {
    match (kind, variant) {
        (ModelKind::StlAnn, _) | (_, Variant::Full) => kind.label().to_string(),
        (k, v) => format!("{} ({})", k.label(), v.tag()),
    }
}

#[derive(Clone, Debug)]
pub struct BundleEvaluation {
    pub report: EvaluationReport,
    pub sets: Vec<ModelSet>,
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
}

/// Loads every checkpoint listed in the manifest, evaluates each model type
/// on the test split, and writes `reports/` and `plots/`. Checkpoints that
/// cannot be read are listed in `reports/failures.json` and skipped.
pub fn evaluate_bundle(bundle: &Path, mut ds: AssetDataset) -> Result<BundleEvaluation> {
    let manifest = Manifest::load(bundle)?;
    let splits_path = bundle.join("splits.csv");
    let f = std::fs::File::open(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
    ds.set_splits_from_records(&read_splits(f)?)?;

    let mut failures = Vec::new();
    let mut groups: BTreeMap<(ModelKind, Variant), Vec<TrainedModel>> = BTreeMap::new();
    for (name, entry) in &manifest.models {
        if entry.status != Status::Done {
            failures.push(format!("{name}: not trained"));
            continue;
        }
        match read_checkpoint(&bundle.join(&entry.checkpoint)) {
            Ok(m) => groups.entry((m.kind, m.variant)).or_default().push(m),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let sets: Vec<ModelSet> = groups
        .into_iter()
        .map(|((kind, variant), members)| ModelSet { kind, label: group_label(kind, variant), members })
        .collect();
    let wells: Vec<WellId> = ds.well_ids().cloned().collect();
    let mut report = EvaluationReport::default();
    for set in &sets {
        let covered: Vec<WellId> = wells.iter().filter(|w| set.member_for(w).is_some()).cloned().collect();
        let mut r = evaluate_model(set, &ds, &covered)?;
        r.parameters = Some(set.parameter_count());
        report.models.push(r);
    }

    let reports = bundle.join("reports");
    let plots_dir = bundle.join("plots");
    create_dir(&reports)?;
    create_dir(&plots_dir)?;
    let mut artifacts: Vec<String> = Vec::new();
    fn tag(dir: &'static str, files: Vec<String>) -> impl Iterator<Item = String> {
        files.into_iter().map(move |f| format!("{dir}/{f}"))
    }
    artifacts.extend(tag("reports", report.write_tables(&reports)?));
    let complexity = sets
        .iter()
        .map(|s| vec![s.label.clone(), s.members.len().to_string(), s.parameter_count().to_string()])
        .collect();
    let mut files = Vec::new();
    write_csv(&reports, "complexity.csv", &["model", "models", "parameters"], complexity, &mut files)?;
    artifacts.extend(tag("reports", files));
    let summary: Vec<serde_json::Value> = report
        .models
        .iter()
        .map(|m| {
            serde_json::json!({
                "model": m.label,
                "wells": m.wells.len(),
                "parameters": m.parameters,
                "mean_trimmed_mape": m.mean_mape(),
                "mean_trimmed_rmse": m.mean_rmse(),
                "mean_sensitivity": m.mean_sensitivity(),
            })
        })
        .collect();
    write_json(&reports.join("summary.json"), &summary)?;
    write_json(&reports.join("failures.json"), &failures)?;
    artifacts.extend(["reports/summary.json".to_string(), "reports/failures.json".to_string()]);

    artifacts.extend(tag("plots", plots::write_data_plots(&ds, &plots_dir)?));
    artifacts.extend(tag("plots", plots::write_error_points(&report, &plots_dir)?));
    let shown: Vec<WellId> = ds.assets().into_values().filter_map(|w| w.into_iter().next()).collect();
    let models: Vec<&dyn FlowModel> = sets.iter().map(|s| s as &dyn FlowModel).collect();
    let covered: Vec<WellId> =
        shown.into_iter().filter(|w| sets.iter().all(|s| s.member_for(w).is_some())).collect();
    artifacts.extend(tag("plots", plots::write_sensitivity_sweeps(&models, &ds, &covered, &plots_dir)?));
    if let Some(set) = sets.iter().find(|s| s.kind == ModelKind::MtlUniversal && s.label == ModelKind::MtlUniversal.label()) {
        if let Some(m) = set.members.first() {
            if let ModelBody::Network { params, .. } = &m.body {
                if params.spec.beta_dim() > 0 {
                    artifacts.extend(tag("plots", plots::write_beta_plots(&set.label, params, &m.scaler, &ds, &plots_dir)?));
                }
            }
        }
    }
    Ok(BundleEvaluation { report, sets, failures, artifacts })
}

/// Mean metrics of one ablation variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean_mape: f64,
    pub mean_sensitivity: f64,
    pub parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

/// Trains the universal model once per variant, each with its own grid
/// search, on a dataset that already carries splits and a scaler.
pub fn ablation_report(config: &ExperimentConfig, ds: &AssetDataset, variants: &[Variant]) -> Result<AblationTable> {
    let scaler = *ds.scaler().ok_or_else(|| Error::Config("dataset has no scaler".into()))?;
    let wells: Vec<WellId> = ds.well_ids().cloned().collect();
    let rows: Vec<Result<AblationRow>> = variants
        .par_iter()
        .map(|&variant| {
            let j = job(config.seed, ModelKind::MtlUniversal, variant, "all", wells.clone());
            let req = FitRequest {
                kind: j.kind,
                variant,
                name: j.name,
                wells: wells.clone(),
                dataset: ds,
                scaler,
                search_epochs: config.search_epochs,
                final_epochs: config.final_epochs,
                seed: j.seed,
            };
            let fit = fit_model(&req, &config.grids.mtl, &config.grids.gbt)?;
            let parameters = fit.model.parameter_count();
            let set = ModelSet { kind: ModelKind::MtlUniversal, label: variant.tag().into(), members: vec![fit.model] };
            let r = evaluate_model(&set, ds, &wells)?;
            Ok(AblationRow { variant, mean_mape: r.mean_mape(), mean_sensitivity: r.mean_sensitivity(), parameters })
        })
        .collect();
    Ok(AblationTable { seed: config.seed, rows: rows.into_iter().collect::<Result<_>>()? })
}

fn ablation_rows(t: &AblationTable) -> Vec<Vec<String>> {
    t.rows
        .iter()
        .map(|r| {
            vec![
                r.variant.tag().to_string(),
                r.variant.description().to_string(),
                fmt(r.mean_mape),
                fmt(r.mean_sensitivity),
                r.parameters.to_string(),
            ]
        })
        .collect()
}

const ABLATION_HEADER: [&str; 5] = ["variant", "description", "mean_mape", "mean_sensitivity", "parameters"];

/// Runs [`ablation_report`] once per seed (each seed also redraws the
/// splits) and writes one table per seed plus the mean over seeds.
pub fn ablation_study(
    config: &ExperimentConfig,
    ds: &AssetDataset,
    seeds: &[u64],
    variants: &[Variant],
    out: &Path,
) -> Result<Vec<AblationTable>> {
    create_dir(out)?;
    let mut tables = Vec::new();
    for &s in seeds {
        let c = ExperimentConfig { seed: s, ..config.clone() };
        let mut d = ds.clone();
        prepare_dataset(&mut d, &c)?;
        let t = ablation_report(&c, &d, variants)?;
        let mut files = Vec::new();
        write_csv(out, &format!("ablation_seed_{s}.csv"), &ABLATION_HEADER, ablation_rows(&t), &mut files)?;
        tables.push(t);
    }
    let mean_rows = variants
        .iter()
        .map(|&v| {
            let rows: Vec<&AblationRow> = tables.iter().filter_map(|t| t.row(v)).collect();
            let avg = |f: fn(&AblationRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
            vec![
                v.tag().to_string(),
                v.description().to_string(),
                fmt(avg(|r| r.mean_mape)),
                fmt(avg(|r| r.mean_sensitivity)),
                rows.len().to_string(),
            ]
        })
        .collect();
    let mut files = Vec::new();
    write_csv(
        out,
        "ablation_summary.csv",
        &["variant", "description", "mean_mape", "mean_sensitivity", "seeds"],
        mean_rows,
        &mut files,
    )?;
    Ok(tables)
}
