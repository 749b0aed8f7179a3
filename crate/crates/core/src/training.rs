//! Loss assembly, the network training loop, hyperparameter search, and the
//! checkpoint container shared by every model type.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphError, Tape, Var};
use crate::data::{AssetDataset, Features, Scaler, SplitLabel, WellId, FEATURE_DIM};
use crate::gbt::{boost, GbtConfig, GbtData, GbtError, GbtModel};
use crate::model::{forward_on_tape, param_count, BoundParams, ModelError, ModelKind, ModelSpec, NetworkParams, Variant};
use crate::optim::{lr_schedule, AdamConfig, OptimError, OptimizerState};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch} (last finite training loss {last:?})")]
    NonFiniteLoss { epoch: usize, last: Option<f64> },
    #[error("empty batch")]
    EmptyBatch,
    #[error("every configuration failed: {0}")]
    AllConfigsFailed(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
}

/// Minimum epoch count accepted by the learning-rate schedule.
pub const MIN_EPOCHS: usize = crate::optim::DECAY_WINDOW;

/// Hyperparameters of one network training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub layers: usize,
    pub hidden: usize,
    pub lambda: f64,
    #[serde(default)]
    pub task_dim: usize,
    #[serde(default)]
    pub lambda_task: f64,
    pub epochs: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_batches() -> usize {
    3
}

fn default_lr() -> f64 {
    1e-3
}

impl HyperConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda >= 0.0 && self.lambda_task >= 0.0) {
            return Err(TrainError::InvalidConfig("regularization factors must be non-negative".into()));
        }
        if self.epochs < MIN_EPOCHS {
            return Err(TrainError::InvalidConfig(format!("epochs must be >= {MIN_EPOCHS}, got {}", self.epochs)));
        }
        if self.batches == 0 {
            return Err(TrainError::InvalidConfig("batches must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn spec(&self, kind: ModelKind, variant: Variant) -> ModelSpec {
        match kind {
            ModelKind::StlAnn => ModelSpec::stl_ann(self.layers, self.hidden),
            _ => ModelSpec::mtl(kind, self.layers, self.hidden, self.task_dim).ablation(variant),
        }
    }
}

/// Scaled training rows. `rows[i]` indexes the model's well table.
#[derive(Clone, Debug, Default)]
pub struct Samples {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub rows: Vec<usize>,
}

impl Samples {
    /// Rows of `wells` whose split label is one of `labels`, scaled with
    /// `scaler`. Well order defines the row index.
    pub fn from_dataset(ds: &AssetDataset, scaler: &Scaler, wells: &[WellId], labels: &[SplitLabel]) -> Self {
        let mut flat = Vec::new();
        let (mut y, mut w, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for (r, well) in wells.iter().enumerate() {
            for &label in labels {
                for i in ds.well_indices_with(well, label) {
                    let o = ds.obs(i);
                    flat.extend(scaler.scale_features(&o.features()));
                    y.push(scaler.scale_rate(o.total_rate()));
                    w.push(o.weight);
                    rows.push(r);
                }
            }
        }
        let x = Array2::from_shape_vec((y.len(), FEATURE_DIM), flat).expect("feature rows");
        Samples { x, y, w, rows }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>, Array2<f64>, Vec<usize>) {
        let x = self.x.select(ndarray::Axis(0), idx);
        let y = Array2::from_shape_fn((idx.len(), 1), |(i, _)| self.y[idx[i]]);
        let w = Array2::from_shape_fn((idx.len(), 1), |(i, _)| self.w[idx[i]]);
        let rows = idx.iter().map(|&i| self.rows[i]).collect();
        (x, y, w, rows)
    }
}

/// Records the loss of the points `idx` on the tape. Returns the full loss
/// and the data term separately.
pub fn loss_on_tape(
    tape: &mut Tape,
    params: &NetworkParams,
    bound: &BoundParams,
    samples: &Samples,
    idx: &[usize],
    lambda: f64,
    lambda_task: f64,
) -> Result<(Var, Var), TrainError> {
    if idx.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (x, y, w, rows) = samples.subset(idx);
    let sw: f64 = w.sum();
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let pred = forward_on_tape(tape, params, bound, xv, &rows)?;
    let diff = tape.sub(pred, yv)?;
    let sq = tape.square(diff);
    let wsq = tape.mul_const(sq, w)?;
    let total = tape.sum(wsq);
    let data = tape.scale(total, 1.0 / sw);
    let mut loss = data;
    if lambda > 0.0 {
        let mut terms = Vec::new();
        for (k, &(wk, bk)) in bound.layers.iter().enumerate() {
            terms.push(wk);
            if k > 0 {
                terms.push(bk);
            }
        }
        let reg = sum_of_squares(tape, &terms)?;
        let reg = tape.scale(reg, lambda);
        loss = tape.add(loss, reg)?;
    }
    let task: Vec<Var> = bound.gamma.iter().chain(&bound.beta).copied().collect();
    if lambda_task > 0.0 && !task.is_empty() {
        let reg = sum_of_squares(tape, &task)?;
        let reg = tape.scale(reg, lambda_task);
        loss = tape.add(loss, reg)?;
    }
    Ok((loss, data))
}

fn sum_of_squares(tape: &mut Tape, vars: &[Var]) -> Result<Var, GraphError> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        let sq = tape.square(v);
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    Ok(acc.expect("at least one term"))
}

/// Weighted mean squared error of a network on scaled samples.
pub fn weighted_mse(params: &NetworkParams, samples: &Samples) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let pred = params.predict_batch(&samples.x, &samples.rows)?;
    let (mut se, mut sw) = (0.0, 0.0);
    for ((p, y), w) in pred.iter().zip(&samples.y).zip(&samples.w) {
        se += w * (p - y).powi(2);
        sw += w;
    }
    Ok(se / sw)
}

/// Splits `0..n` into `k` contiguous batches whose sizes differ by at most one.
pub fn batch_bounds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let k = k.min(n).max(1);
    let (q, r) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = q + usize::from(b < r);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// A trained network with its per-epoch loss traces.
#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub params: NetworkParams,
    pub train_trace: Vec<f64>,
    pub valid_trace: Vec<f64>,
}

/// Trains a network from scratch. Every epoch shuffles the training points
/// (across all wells), cuts them into `hyper.batches` batches, and takes
/// one Adam step per batch.
pub fn train_network(
    spec: &ModelSpec,
    wells: Vec<WellId>,
    train: &Samples,
    valid: Option<&Samples>,
    hyper: &HyperConfig,
    seed: u64,
) -> Result<TrainedNetwork, TrainError> {
    hyper.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut params = NetworkParams::init(spec, wells, seed::derive(seed, "init"))?;
    let mut rng = seed::rng(seed::derive(seed, "shuffle"));
    let mut opt = OptimizerState::new(AdamConfig::default(), params.trainable());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let bounds = batch_bounds(train.len(), hyper.batches);
    let sw_total: f64 = train.w.iter().sum();
    let valid = valid.filter(|v| !v.is_empty());
    let mut train_trace = Vec::with_capacity(hyper.epochs);
    let mut valid_trace = Vec::with_capacity(if valid.is_some() { hyper.epochs } else { 0 });
    for epoch in 0..hyper.epochs {
        let lr = lr_schedule(epoch, hyper.epochs, hyper.learning_rate)?;
        order.shuffle(&mut rng);
        let mut epoch_se = 0.0;
        for range in &bounds {
            let idx = &order[range.clone()];
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (loss, data) = loss_on_tape(&mut tape, &params, &bound, train, idx, hyper.lambda, hyper.lambda_task)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, last: train_trace.last().copied() });
            }
            let batch_sw: f64 = idx.iter().map(|&i| train.w[i]).sum();
            epoch_se += tape.scalar(data) * batch_sw;
            tape.backward(loss)?;
            let grads: Vec<Array2<f64>> = bound.trainable().into_iter().map(|v| tape.grad(v)).collect();
            opt.step(&mut params.trainable_mut(), &grads, lr)?;
        }
        train_trace.push(epoch_se / sw_total);
        if let Some(v) = valid {
            valid_trace.push(weighted_mse(&params, v)?);
        }
    }
    Ok(TrainedNetwork { params, train_trace, valid_trace })
}

/// Candidate values for a network grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkGrid {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub task_dim: Vec<usize>,
    #[serde(default)]
    pub lambda_task: Vec<f64>,
}

impl NetworkGrid {
    pub fn stl_default() -> Self {
        NetworkGrid {
            layers: vec![4, 6, 8],
            hidden: vec![8, 16, 32],
            lambda: vec![1e-5, 1e-4, 1e-3],
            task_dim: vec![],
            lambda_task: vec![],
        }
    }

    pub fn mtl_default() -> Self {
        NetworkGrid {
            layers: vec![4, 6, 8],
            hidden: vec![8, 16, 32, 64],
            lambda: vec![1e-5, 1e-4, 1e-3],
            task_dim: vec![1, 2, 4],
            lambda_task: vec![1e-4, 1e-3, 1e-2],
        }
    }

    /// Distinct configurations for the given model, in grid order. Values
    /// that the model ignores (task settings without task parameters) are
    /// collapsed.
    pub fn configs(&self, kind: ModelKind, variant: Variant, epochs: usize) -> Vec<HyperConfig> {
        let probe = |td| HyperConfig {
            layers: 4,
            hidden: 1,
            lambda: 0.0,
            task_dim: td,
            lambda_task: 0.0,
            epochs,
            batches: default_batches(),
            learning_rate: default_lr(),
        }
        .spec(kind, variant);
        let uses_beta = probe(1).beta_dim() > 0;
        let uses_task = uses_beta || probe(1).uses_gamma();
        let dims: Vec<usize> = if uses_beta { self.task_dim.clone() } else { vec![0] };
        let lts: Vec<f64> = if uses_task { self.lambda_task.clone() } else { vec![0.0] };
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &hidden in &self.hidden {
                for &lambda in &self.lambda {
                    for &task_dim in &dims {
                        for &lambda_task in &lts {
                            out.push(HyperConfig {
                                layers,
                                hidden,
                                lambda,
                                task_dim,
                                lambda_task,
                                epochs,
                                batches: default_batches(),
                                learning_rate: default_lr(),
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Index of the configuration to keep: the lowest validation loss, except
/// that any candidate within 1% of it with fewer parameters is preferred.
/// Non-finite losses are skipped.
pub fn select_config(candidates: &[(f64, usize)]) -> Option<usize> {
    let best = candidates
        .iter()
        .map(|c| c.0)
        .filter(|l| l.is_finite())
        .min_by(f64::total_cmp)?;
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.0.is_finite() && c.0 <= best + 0.01 * best.abs())
        .min_by(|a, b| a.1 .1.cmp(&b.1 .1).then(a.1 .0.total_cmp(&b.1 .0)).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial<C> {
    pub config: C,
    pub valid_loss: Option<f64>,
    pub parameters: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult<C> {
    pub best: C,
    pub trials: Vec<Trial<C>>,
}

fn pick<C: Clone>(trials: Vec<Trial<C>>) -> Result<SearchResult<C>, TrainError> {
    let scored: Vec<(f64, usize)> =
        trials.iter().map(|t| (t.valid_loss.unwrap_or(f64::NAN), t.parameters)).collect();
    match select_config(&scored) {
        Some(i) => Ok(SearchResult { best: trials[i].config.clone(), trials }),
        None => {
            let msgs: Vec<String> = trials.iter().filter_map(|t| t.error.clone()).collect();
            Err(TrainError::AllConfigsFailed(if msgs.is_empty() { "empty grid".into() } else { msgs.join("; ") }))
        }
    }
}

/// Trains every configuration on `train` and scores it on `valid`. All
/// configurations share the same seed.
pub fn grid_search(
    kind: ModelKind,
    variant: Variant,
    wells: &[WellId],
    train: &Samples,
    valid: &Samples,
    configs: &[HyperConfig],
    seed: u64,
) -> Result<SearchResult<HyperConfig>, TrainError> {
    let trials: Vec<Trial<HyperConfig>> = configs
        .par_iter()
        .map(|c| {
            let spec = c.spec(kind, variant);
            let parameters = param_count(&spec, wells.len()).total();
            let run = train_network(&spec, wells.to_vec(), train, None, c, seed)
                .and_then(|net| weighted_mse(&net.params, valid));
            match run {
                Ok(l) if l.is_finite() => Trial { config: c.clone(), valid_loss: Some(l), parameters, error: None },
                Ok(l) => Trial { config: c.clone(), valid_loss: None, parameters, error: Some(format!("loss {l}")) },
                Err(e) => Trial { config: c.clone(), valid_loss: None, parameters, error: Some(e.to_string()) },
            }
        })
        .collect();
    pick(trials)
}

/// Candidate values for the tree baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtGrid {
    pub max_depth: Vec<usize>,
    pub lambda: Vec<f64>,
    #[serde(default = "default_gbt_gamma")]
    pub gamma: Vec<f64>,
    pub learning_rate: f64,
    pub rounds: usize,
    pub patience: usize,
}

fn default_gbt_gamma() -> Vec<f64> {
    vec![0.0]
}

impl Default for GbtGrid {
    fn default() -> Self {
        GbtGrid {
            max_depth: vec![2, 3, 4],
            lambda: vec![0.1, 1.0, 10.0],
            gamma: vec![0.0, 1e-3],
            learning_rate: 0.1,
            rounds: 500,
            patience: 50,
        }
    }
}

impl GbtGrid {
    pub fn configs(&self) -> Vec<GbtConfig> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depth {
            for &lambda in &self.lambda {
                for &gamma in &self.gamma {
                    out.push(GbtConfig {
                        rounds: self.rounds,
                        learning_rate: self.learning_rate,
                        max_depth,
                        lambda,
                        gamma,
                        patience: self.patience,
                    });
                }
            }
        }
        out
    }
}

fn gbt_data(s: &Samples) -> GbtData<'_> {
    GbtData { x: &s.x, y: &s.y, w: &s.w }
}

/// Searches the tree grid with early stopping on `valid`, then refits the
/// winner on `train` plus `valid` for the number of rounds it kept.
pub fn fit_gbt(train: &Samples, valid: &Samples, grid: &GbtGrid) -> Result<(GbtModel, SearchResult<GbtConfig>), TrainError> {
    let mut trials = Vec::new();
    for c in grid.configs() {
        match boost(gbt_data(train), Some(gbt_data(valid)), &c) {
            Ok(m) => {
                let l = m.valid_trace.get(m.trees.len()).copied();
                let fixed = GbtConfig { rounds: m.trees.len(), ..c };
                trials.push(Trial { config: fixed, valid_loss: l, parameters: m.n_parameters(), error: None });
            }
            Err(e) => trials.push(Trial { config: c, valid_loss: None, parameters: 0, error: Some(e.to_string()) }),
        }
    }
    let search = pick(trials)?;
    let all = concat_samples(train, valid);
    let model = boost(gbt_data(&all), None, &search.best)?;
    Ok((model, search))
}

pub fn concat_samples(a: &Samples, b: &Samples) -> Samples {
    Samples {
        x: ndarray::concatenate(ndarray::Axis(0), &[a.x.view(), b.x.view()]).expect("same width"),
        y: a.y.iter().chain(&b.y).copied().collect(),
        w: a.w.iter().chain(&b.w).copied().collect(),
        rows: a.rows.iter().chain(&b.rows).copied().collect(),
    }
}

/// Version of the checkpoint layout.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelBody {
    Network { hyper: HyperConfig, params: NetworkParams },
    Gbt { model: GbtModel },
}

/// A persisted model covering one or more wells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub kind: ModelKind,
    pub variant: Variant,
    /// Unique name inside a bundle, e.g. `mtl-asset_A1`.
    pub name: String,
    pub wells: Vec<WellId>,
    pub scaler: Scaler,
    pub body: ModelBody,
    pub train_trace: Vec<f64>,
    pub valid_trace: Vec<f64>,
}

impl TrainedModel {
    pub fn parameter_count(&self) -> usize {
        match &self.body {
            ModelBody::Network { params, .. } => params.param_count().total(),
            ModelBody::Gbt { model } => model.n_parameters(),
        }
    }

    pub fn covers(&self, well: &WellId) -> bool {
        self.wells.contains(well)
    }

    /// Prediction in physical units.
    pub fn predict_physical(&self, well: &WellId, x: &Features) -> Result<f64, ModelError> {
        if !self.covers(well) {
            return Err(ModelError::UnknownWell(well.0.clone()));
        }
        let z = self.scaler.scale_features(x);
        let y = match &self.body {
            ModelBody::Network { params, .. } => params.predict_point(&z, well)?,
            ModelBody::Gbt { model } => model.predict(ndarray::ArrayView1::from(&z[..])),
        };
        Ok(self.scaler.unscale_rate(y))
    }

    /// Batch prediction in physical units for points of one well.
    pub fn predict_well(&self, well: &WellId, xs: &[Features]) -> Result<Vec<f64>, ModelError> {
        if !self.covers(well) {
            return Err(ModelError::UnknownWell(well.0.clone()));
        }
        let flat: Vec<f64> = xs.iter().flat_map(|x| self.scaler.scale_features(x)).collect();
        let z = Array2::from_shape_vec((xs.len(), FEATURE_DIM), flat).expect("rows");
        let y: Vec<f64> = match &self.body {
            ModelBody::Network { params, .. } => {
                let r = params.well_index(well)?;
                params.predict_batch(&z, &vec![r; xs.len()])?.to_vec()
            }
            ModelBody::Gbt { model } => model.predict_all(&z),
        };
        Ok(y.into_iter().map(|v| self.scaler.unscale_rate(v)).collect())
    }
}

/// Settings for fitting one model from a dataset with splits.
#[derive(Clone, Debug)]
pub struct FitRequest<'a> {
    pub kind: ModelKind,
    pub variant: Variant,
    pub name: String,
    pub wells: Vec<WellId>,
    pub dataset: &'a AssetDataset,
    pub scaler: Scaler,
    pub search_epochs: usize,
    pub final_epochs: usize,
    pub seed: u64,
}

/// Outcome of [`fit_model`]: the final model and the search record.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: TrainedModel,
    pub search: serde_json::Value,
}

/// Grid search on train/validation, then a fresh final run on the whole
/// development set.
pub fn fit_model(req: &FitRequest, net_grid: &NetworkGrid, gbt_grid: &GbtGrid) -> Result<FitOutcome, TrainError> {
    let ds = req.dataset;
    let train = Samples::from_dataset(ds, &req.scaler, &req.wells, &[SplitLabel::Train]);
    let valid = Samples::from_dataset(ds, &req.scaler, &req.wells, &[SplitLabel::Validation]);
    if train.is_empty() || valid.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let base = |body, train_trace, valid_trace| TrainedModel {
        version: CHECKPOINT_VERSION,
        kind: req.kind,
        variant: req.variant,
        name: req.name.clone(),
        wells: req.wells.clone(),
        scaler: req.scaler,
        body,
        train_trace,
        valid_trace,
    };
    if req.kind == ModelKind::StlGbt {
        let (model, search) = fit_gbt(&train, &valid, gbt_grid)?;
        let tt = model.train_trace.clone();
        let search = serde_json::to_value(&search).expect("serializable");
        return Ok(FitOutcome { model: base(ModelBody::Gbt { model }, tt, vec![]), search });
    }
    let configs = net_grid.configs(req.kind, req.variant, req.search_epochs);
    let search = grid_search(req.kind, req.variant, &req.wells, &train, &valid, &configs, seed::derive(req.seed, "search"))?;
    let hyper = HyperConfig { epochs: req.final_epochs, ..search.best.clone() };
    let dev = concat_samples(&train, &valid);
    let spec = hyper.spec(req.kind, req.variant);
    let net = train_network(&spec, req.wells.clone(), &dev, Some(&valid), &hyper, seed::derive(req.seed, "final"))?;
    let search = serde_json::to_value(&search).expect("serializable");
    Ok(FitOutcome {
        model: base(ModelBody::Network { hyper, params: net.params }, net.train_trace, net.valid_trace),
        search,
    })
}
