//! The network models: per-well choke remapping, the shared residual
//! network, and the multi-task composition of the two.
//!
//! A prediction for well `j` is `h(g(x; gamma_j); beta_j, alpha)`, where
//! `g` replaces the scaled choke opening by a piecewise-linear remapping
//! `psi` and `h` is a pre-activation residual network evaluated on the
//! adjusted features stacked with the task vector `beta_j`. The single-task
//! baseline is the same network with no task vector and no remapping.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphError, Tape, Var};
use crate::data::{WellId, FEATURE_DIM};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown well `{0}`")]
    UnknownWell(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Default choke breakpoints `0.2 k, k = 1..4`.
pub fn default_breakpoints() -> Vec<f64> {
    vec![0.2, 0.4, 0.6, 0.8]
}

/// `psi = (1 + g0) * (u + sum_k g_k * max(0, u - u*_k))`.
pub fn adjust_choke(u: f64, gamma: &[f64], breakpoints: &[f64]) -> f64 {
    debug_assert_eq!(gamma.len(), breakpoints.len() + 1);
    let hinge: f64 = gamma[1..]
        .iter()
        .zip(breakpoints)
        .map(|(g, b)| g * (u - b).max(0.0))
        .sum();
    (1.0 + gamma[0]) * (u + hinge)
}

/// Replaces the scaled choke opening (first entry) by its remapping.
pub fn adjust_features(x: &[f64; FEATURE_DIM], gamma: &[f64], breakpoints: &[f64]) -> [f64; FEATURE_DIM] {
    let mut z = *x;
    z[0] = adjust_choke(x[0], gamma, breakpoints);
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    StlGbt,
    StlAnn,
    MtlAsset,
    MtlUniversal,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::StlGbt, ModelKind::StlAnn, ModelKind::MtlAsset, ModelKind::MtlUniversal];

    /// Name used on the command line and in file names.
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::StlGbt => "stl-gbt",
            ModelKind::StlAnn => "stl-ann",
            ModelKind::MtlAsset => "mtl-asset",
            ModelKind::MtlUniversal => "mtl-universal",
        }
    }

    /// Name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::StlGbt => "STL-GBT",
            ModelKind::StlAnn => "STL-ANN",
            ModelKind::MtlAsset => "MTL-Asset",
            ModelKind::MtlUniversal => "MTL-Universal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == s)
    }

    pub fn is_multi_task(self) -> bool {
        matches!(self, ModelKind::MtlAsset | ModelKind::MtlUniversal)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Which well-specific mechanisms a multi-task model keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoBeta,
    NoGamma,
    NoBetaNoGamma,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoBeta, Variant::NoGamma, Variant::NoBetaNoGamma];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBeta => "no-beta",
            Variant::NoGamma => "no-gamma",
            Variant::NoBetaNoGamma => "no-beta-no-gamma",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::Full => "Complete model",
            Variant::NoBeta => "Remove beta",
            Variant::NoGamma => "Remove gamma",
            Variant::NoBetaNoGamma => "Remove gamma and beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == s)
    }

    pub fn has_beta(self) -> bool {
        matches!(self, Variant::Full | Variant::NoGamma)
    }

    pub fn has_gamma(self) -> bool {
        matches!(self, Variant::Full | Variant::NoBeta)
    }
}

/// Architecture of a network model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub variant: Variant,
    /// Number of linear layers (even, at least 4).
    pub layers: usize,
    pub hidden: usize,
    /// Task vector length requested; ignored when the variant drops it.
    pub task_dim: usize,
    pub breakpoints: Vec<f64>,
}

impl ModelSpec {
    pub fn stl_ann(layers: usize, hidden: usize) -> Self {
        ModelSpec {
            kind: ModelKind::StlAnn,
            variant: Variant::NoBetaNoGamma,
            layers,
            hidden,
            task_dim: 0,
            breakpoints: default_breakpoints(),
        }
    }

    pub fn mtl(kind: ModelKind, layers: usize, hidden: usize, task_dim: usize) -> Self {
        ModelSpec {
            kind,
            variant: Variant::Full,
            layers,
            hidden,
            task_dim,
            breakpoints: default_breakpoints(),
        }
    }

    /// The same architecture with one or both well-specific mechanisms
    /// removed.
    pub fn ablation(&self, variant: Variant) -> Self {
        ModelSpec { variant, ..self.clone() }
    }

    pub fn uses_gamma(&self) -> bool {
        self.kind.is_multi_task() && self.variant.has_gamma()
    }

    pub fn beta_dim(&self) -> usize {
        if self.kind.is_multi_task() && self.variant.has_beta() {
            self.task_dim
        } else {
            0
        }
    }

    pub fn gamma_dim(&self) -> usize {
        self.breakpoints.len() + 1
    }

    pub fn input_dim(&self) -> usize {
        FEATURE_DIM + self.beta_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.kind == ModelKind::StlGbt {
            return Err(ModelError::InvalidSpec("gradient boosted trees are not a network".into()));
        }
        if self.layers < 4 || self.layers % 2 != 0 {
            return Err(ModelError::InvalidSpec(format!("layers must be even and >= 4, got {}", self.layers)));
        }
        if self.hidden == 0 {
            return Err(ModelError::InvalidSpec("hidden width must be positive".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[1] <= w[0])
            || self.breakpoints.iter().any(|b| !(*b > 0.0 && *b < 1.0))
        {
            return Err(ModelError::InvalidSpec(format!(
                "breakpoints must be strictly increasing in (0, 1): {:?}",
                self.breakpoints
            )));
        }
        Ok(())
    }
}

/// Trainable scalar counts, split into shared and per-well parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub shared: usize,
    pub per_well: usize,
    pub wells: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.shared + self.per_well * self.wells
    }
}

/// Closed-form parameter count of a network specification.
pub fn param_count(spec: &ModelSpec, wells: usize) -> ParamCount {
    let (d, h, l) = (spec.input_dim(), spec.hidden, spec.layers);
    let shared = (d * h + h) + (l - 2) * (h * h + h) + (h + 1);
    let per_well = spec.beta_dim() + if spec.uses_gamma() { spec.gamma_dim() } else { 0 };
    ParamCount { shared, per_well, wells }
}

/// One affine layer. `weight` is stored input-major (`in x out`) so a batch
/// of row vectors is transformed as `X W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    /// Weights uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Pre-activation residual network with `layers` linear layers: an input
/// layer, `(layers - 2) / 2` two-layer residual blocks, and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet {
    pub layers: Vec<Linear>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|x| x.max(0.0))
}

impl ResidualNet {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut out = Vec::with_capacity(layers);
        out.push(Linear::init(input_dim, hidden, rng));
        for _ in 0..layers - 2 {
            out.push(Linear::init(hidden, hidden, rng));
        }
        out.push(Linear::init(hidden, 1, rng));
        ResidualNet { layers: out }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    /// Batch forward pass, one row per point; returns one output per row.
    pub fn forward(&self, z: &Array2<f64>) -> Result<Array1<f64>, ModelError> {
        if z.ncols() != self.input_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                z.ncols()
            )));
        }
        let n = self.layers.len();
        let mut h = self.layers[0].apply(z);
        for k in (1..n - 1).step_by(2) {
            let inner = self.layers[k].apply(&relu(&h));
            h = h + self.layers[k + 1].apply(&relu(&inner));
        }
        Ok(self.layers[n - 1].apply(&h).index_axis_move(Axis(1), 0))
    }
}

/// Tape handles for one bound copy of the parameters.
pub struct BoundParams {
    pub layers: Vec<(Var, Var)>,
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
}

impl BoundParams {
    /// Trainable handles in the order of [`NetworkParams::trainable_mut`].
    pub fn trainable(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        v.extend(self.gamma);
        v.extend(self.beta);
        v
    }
}

/// Shared network plus per-well tables. Row `j` of `gamma` and `beta`
/// belongs to `wells[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: ModelSpec,
    pub wells: Vec<WellId>,
    pub shared: ResidualNet,
    pub gamma: Array2<f64>,
    pub beta: Array2<f64>,
}

impl NetworkParams {
    /// Shared weights drawn from `seed`; every well starts with zero task
    /// vector and identity choke remapping.
    pub fn init(spec: &ModelSpec, wells: Vec<WellId>, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        if wells.is_empty() {
            return Err(ModelError::InvalidSpec("a model needs at least one well".into()));
        }
        if spec.kind == ModelKind::StlAnn && wells.len() != 1 {
            return Err(ModelError::InvalidSpec("a single-task model covers exactly one well".into()));
        }
        let mut rng = seed::rng(seed);
        let shared = ResidualNet::init(spec.input_dim(), spec.hidden, spec.layers, &mut rng);
        Ok(NetworkParams {
            spec: spec.clone(),
            gamma: Array2::zeros((wells.len(), spec.gamma_dim())),
            beta: Array2::zeros((wells.len(), spec.beta_dim())),
            wells,
            shared,
        })
    }

    pub fn well_index(&self, well: &WellId) -> Result<usize, ModelError> {
        self.wells
            .iter()
            .position(|w| w == well)
            .ok_or_else(|| ModelError::UnknownWell(well.0.clone()))
    }

    pub fn well_lookup(&self) -> BTreeMap<WellId, usize> {
        self.wells.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect()
    }

    pub fn param_count(&self) -> ParamCount {
        param_count(&self.spec, self.wells.len())
    }

    /// Network output for already adjusted features `z` and task vector.
    pub fn shared_forward(&self, z: &[f64], beta: &[f64]) -> Result<f64, ModelError> {
        if z.len() != FEATURE_DIM || beta.len() != self.spec.beta_dim() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} features and {} task parameters, got {} and {}",
                FEATURE_DIM,
                self.spec.beta_dim(),
                z.len(),
                beta.len()
            )));
        }
        let row: Vec<f64> = z.iter().chain(beta).copied().collect();
        let input = Array2::from_shape_vec((1, row.len()), row).expect("row vector");
        Ok(self.shared.forward(&input)?[0])
    }

    /// Scaled prediction for one point of a registered well.
    pub fn predict_point(&self, x: &[f64; FEATURE_DIM], well: &WellId) -> Result<f64, ModelError> {
        let j = self.well_index(well)?;
        let z = if self.spec.uses_gamma() {
            adjust_features(x, self.gamma.row(j).as_slice().expect("contiguous"), &self.spec.breakpoints)
        } else {
            *x
        };
        let beta = self.beta.row(j).to_vec();
        self.shared_forward(&z, &beta)
    }

    /// Batch scaled prediction; `rows[i]` is the table row of point `i`.
    pub fn predict_batch(&self, x: &Array2<f64>, rows: &[usize]) -> Result<Array1<f64>, ModelError> {
        if x.ncols() != FEATURE_DIM || x.nrows() != rows.len() {
            return Err(ModelError::ShapeMismatch(format!("batch {:?} with {} rows", x.dim(), rows.len())));
        }
        let mut z = x.clone();
        if self.spec.uses_gamma() {
            for (i, &r) in rows.iter().enumerate() {
                let g = self.gamma.row(r);
                z[[i, 0]] = adjust_choke(x[[i, 0]], g.as_slice().expect("contiguous"), &self.spec.breakpoints);
            }
        }
        let input = if self.spec.beta_dim() > 0 {
            let b = self.beta.select(Axis(0), rows);
            ndarray::concatenate(Axis(1), &[z.view(), b.view()]).expect("row counts match")
        } else {
            z
        };
        self.shared.forward(&input)
    }

    /// Places the parameters on a tape. Pinned parameters (gamma when the
    /// variant drops it) are not bound.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let layers = self
            .shared
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let gamma = self.spec.uses_gamma().then(|| tape.param(self.gamma.clone()));
        let beta = (self.spec.beta_dim() > 0).then(|| tape.param(self.beta.clone()));
        BoundParams { layers, gamma, beta }
    }

    /// Mutable trainable arrays, matching [`BoundParams::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let uses_gamma = self.spec.uses_gamma();
        let has_beta = self.spec.beta_dim() > 0;
        let mut v: Vec<&mut Array2<f64>> = Vec::new();
        for l in &mut self.shared.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        if uses_gamma {
            v.push(&mut self.gamma);
        }
        if has_beta {
            v.push(&mut self.beta);
        }
        v
    }

    pub fn trainable(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = Vec::new();
        for l in &self.shared.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        if self.spec.uses_gamma() {
            v.push(&self.gamma);
        }
        if self.spec.beta_dim() > 0 {
            v.push(&self.beta);
        }
        v
    }
}

/// Records the forward pass of a batch on the tape and returns the `n x 1`
/// prediction. `x` is an `n x 6` constant of scaled features.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &NetworkParams,
    bound: &BoundParams,
    x: Var,
    rows: &[usize],
) -> Result<Var, GraphError> {
    let spec = &params.spec;
    let mut z = x;
    if let Some(gamma) = bound.gamma {
        let g = tape.gather(gamma, rows)?;
        let u = tape.slice(x, 0, 1)?;
        let m = spec.breakpoints.len();
        let mut hinges = Vec::with_capacity(m);
        for &b in &spec.breakpoints {
            let shifted = tape.add_scalar(u, -b);
            hinges.push(tape.relu(shifted));
        }
        let hinges = tape.concat(&hinges)?;
        let slopes = tape.slice(g, 1, m + 1)?;
        let weighted = tape.mul(slopes, hinges)?;
        let bend = tape.row_sum(weighted);
        let inner = tape.add(u, bend)?;
        let g0 = tape.slice(g, 0, 1)?;
        let gain = tape.add_scalar(g0, 1.0);
        let psi = tape.mul(inner, gain)?;
        let rest = tape.slice(x, 1, FEATURE_DIM)?;
        z = tape.concat(&[psi, rest])?;
    }
    if let Some(beta) = bound.beta {
        let b = tape.gather(beta, rows)?;
        z = tape.concat(&[z, b])?;
    }
    let n = bound.layers.len();
    let (w, b) = bound.layers[0];
    let h0 = tape.matmul(z, w)?;
    let mut h = tape.add_row(h0, b)?;
    for k in (1..n - 1).step_by(2) {
        let a = tape.relu(h);
        let (w1, b1) = bound.layers[k];
        let a = tape.matmul(a, w1)?;
        let a = tape.add_row(a, b1)?;
        let a = tape.relu(a);
        let (w2, b2) = bound.layers[k + 1];
        let a = tape.matmul(a, w2)?;
        let a = tape.add_row(a, b2)?;
        h = tape.add(h, a)?;
    }
    let (w, b) = bound.layers[n - 1];
    let out = tape.matmul(h, w)?;
    tape.add_row(out, b)
}

/// Column `0` of a scaled feature matrix, for plotting and tests.
pub fn choke_column(x: &Array2<f64>) -> Array1<f64> {
    x.slice(s![.., 0]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn w(s: &str) -> WellId {
        WellId::from(s)
    }

    #[test]
    fn zero_gamma_is_identity() {
        let g = [0.0; 5];
        assert_eq!(adjust_choke(0.37, &g, &default_breakpoints()), 0.37);
    }

    #[test]
    fn gain_and_first_hinge() {
        let bp = default_breakpoints();
        assert_relative_eq!(adjust_choke(0.5, &[0.1, 0.0, 0.0, 0.0, 0.0], &bp), 0.55, max_relative = 1e-15);
        assert_relative_eq!(adjust_choke(0.5, &[0.0, 1.0, 0.0, 0.0, 0.0], &bp), 0.8, max_relative = 1e-15);
    }

    #[test]
    fn psi_is_piecewise_linear_with_kinks_at_breakpoints() {
        let bp = default_breakpoints();
        let g = [0.3, -0.4, 0.7, 0.2, -0.9];
        let knots = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for seg in knots.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let pts: Vec<f64> = (0..=10).map(|i| a + (b - a) * i as f64 / 10.0).collect();
            let slope = (adjust_choke(pts[1], &g, &bp) - adjust_choke(pts[0], &g, &bp)) / (pts[1] - pts[0]);
            for p in pts.windows(2) {
                let s = (adjust_choke(p[1], &g, &bp) - adjust_choke(p[0], &g, &bp)) / (p[1] - p[0]);
                assert_relative_eq!(s, slope, max_relative = 1e-9);
            }
        }
        // continuity at each breakpoint
        for &k in &bp {
            let l = adjust_choke(k - 1e-12, &g, &bp);
            let r = adjust_choke(k + 1e-12, &g, &bp);
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_network_predicts_zero() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 2);
        let mut p = NetworkParams::init(&spec, vec![w("a")], 1).unwrap();
        for l in &mut p.shared.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        let q = p.shared_forward(&[0.3, 0.1, 0.2, 0.4, 0.5, 0.6], &[1.0, -1.0]).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn degenerate_block_sums_first_layer() {
        // 1 residual block with zero inner weights: Q = 1 . (W1 z1 + b1)
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 3, 1);
        let mut p = NetworkParams::init(&spec, vec![w("a")], 1).unwrap();
        let w1 = Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 + 1.0) * 0.1 - j as f64 * 0.05);
        p.shared.layers[0].weight = w1.clone();
        p.shared.layers[0].bias = ndarray::array![[0.5, -0.25, 1.0]];
        for k in 1..3 {
            p.shared.layers[k].weight.fill(0.0);
            p.shared.layers[k].bias.fill(0.0);
        }
        p.shared.layers[3].weight = Array2::ones((3, 1));
        p.shared.layers[3].bias.fill(0.0);
        let z = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let beta = [2.0];
        let z1: Vec<f64> = z.iter().chain(&beta).copied().collect();
        let mut expected = 0.5 - 0.25 + 1.0;
        for j in 0..3 {
            for (i, zi) in z1.iter().enumerate() {
                expected += w1[[i, j]] * zi;
            }
        }
        assert_relative_eq!(p.shared_forward(&z, &beta).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn task_vector_changes_output() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 1);
        let p = NetworkParams::init(&spec, vec![w("a")], 7).unwrap();
        let z = [0.3, 0.1, 0.2, 0.4, 0.5, 0.2];
        let a = p.shared_forward(&z, &[0.0]).unwrap();
        assert_eq!(a, p.shared_forward(&z, &[0.0]).unwrap());
        assert_ne!(a, p.shared_forward(&z, &[0.5]).unwrap());
    }

    #[test]
    fn identical_wells_predict_identically() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 6, 8, 2);
        let mut p = NetworkParams::init(&spec, vec![w("a"), w("b"), w("c")], 3).unwrap();
        p.beta = ndarray::array![[0.1, 0.2], [0.1, 0.2], [-0.5, 0.3]];
        p.gamma.row_mut(0).assign(&ndarray::array![0.1, 0.2, 0.0, -0.1, 0.0]);
        p.gamma.row_mut(1).assign(&ndarray::array![0.1, 0.2, 0.0, -0.1, 0.0]);
        let x = [0.45, 0.2, 0.1, 0.7, 0.3, 0.3];
        assert_eq!(p.predict_point(&x, &w("a")).unwrap(), p.predict_point(&x, &w("b")).unwrap());
        assert_eq!(p.predict_point(&x, &w("z")), Err(ModelError::UnknownWell("z".into())));
    }

    #[test]
    fn zero_gamma_reduces_to_shared_forward() {
        let spec = ModelSpec::mtl(ModelKind::MtlAsset, 4, 8, 2);
        let mut p = NetworkParams::init(&spec, vec![w("a")], 3).unwrap();
        p.beta = ndarray::array![[0.3, -0.2]];
        let x = [0.45, 0.2, 0.1, 0.7, 0.3, 0.3];
        assert_eq!(p.predict_point(&x, &w("a")).unwrap(), p.shared_forward(&x, &[0.3, -0.2]).unwrap());
    }

    #[test]
    fn batch_and_tape_forward_agree_with_pointwise() {
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 6, 8, 2);
        let mut p = NetworkParams::init(&spec, vec![w("a"), w("b")], 5).unwrap();
        p.gamma = ndarray::array![[0.1, 0.5, -0.2, 0.0, 0.3], [-0.1, 0.0, 0.4, 0.2, 0.0]];
        p.beta = ndarray::array![[0.3, -0.2], [0.0, 0.7]];
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) % 10) as f64 / 10.0);
        let rows = [0, 1, 1, 0, 1];
        let batch = p.predict_batch(&x, &rows).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let out = forward_on_tape(&mut tape, &p, &bound, xv, &rows).unwrap();
        for (i, &r) in rows.iter().enumerate() {
            let xi: [f64; 6] = std::array::from_fn(|k| x[[i, k]]);
            let single = p.predict_point(&xi, &p.wells[r].clone()).unwrap();
            assert_relative_eq!(batch[i], single, max_relative = 1e-12);
            assert_relative_eq!(tape.value(out)[[i, 0]], single, max_relative = 1e-12);
        }
    }

    #[test]
    fn ablation_construction() {
        let full = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 2);
        assert!(full.uses_gamma() && full.beta_dim() == 2);
        let nb = full.ablation(Variant::NoBeta);
        assert_eq!(nb.input_dim(), 6);
        assert!(nb.uses_gamma());
        let ng = full.ablation(Variant::NoGamma);
        assert!(!ng.uses_gamma());
        assert_eq!(ng.beta_dim(), 2);
        let none = full.ablation(Variant::NoBetaNoGamma);
        let c = param_count(&none, 12);
        assert_eq!(c.per_well, 0);
        assert_eq!(c.total(), param_count(&ModelSpec::stl_ann(4, 8), 1).total());
    }

    #[test]
    fn param_count_matches_enumeration() {
        // m_l=4, m_h=8, m_beta=2, 3 wells:
        // input 8*8+8=72, block 2*(64+8)=144, output 9 -> 225 shared
        // per well 5 + 2 = 7 -> 246 total
        let spec = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 2);
        let c = param_count(&spec, 3);
        assert_eq!(c.shared, 225);
        assert_eq!(c.per_well, 7);
        assert_eq!(c.total(), 246);
        let p = NetworkParams::init(&spec, vec![w("a"), w("b"), w("c")], 1).unwrap();
        let enumerated: usize = p.trainable().iter().map(|a| a.len()).sum();
        assert_eq!(enumerated, c.total());
        let mut more = spec.clone();
        more.task_dim = 2;
        assert_eq!(param_count(&more, 4).total() - param_count(&more, 3).total(), 5 + 2);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(NetworkParams::init(&ModelSpec::stl_ann(5, 8), vec![w("a")], 0).is_err());
        assert!(NetworkParams::init(&ModelSpec::stl_ann(2, 8), vec![w("a")], 0).is_err());
        assert!(NetworkParams::init(&ModelSpec::stl_ann(4, 8), vec![w("a"), w("b")], 0).is_err());
        let mut s = ModelSpec::mtl(ModelKind::MtlUniversal, 4, 8, 1);
        s.breakpoints = vec![0.5, 0.4];
        assert!(s.validate().is_err());
    }
}
