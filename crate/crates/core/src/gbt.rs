//! Gradient boosted regression trees with exact greedy splits, used as the
//! per-well tree baseline.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GbtError {
    #[error("cannot fit a tree to an empty data set")]
    EmptyData,
    #[error("{0} rows of features but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Leaf-weight (`lambda`) and leaf-count (`gamma`) penalties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeReg {
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            TreeNode::Leaf { weight } => *weight,
            TreeNode::Split { feature, threshold, left, right } => {
                if x[*feature] < *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: TreeNode,
}

impl RegressionTree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        self.root.predict(x)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_leaves(&self) -> usize {
        self.root.leaves()
    }
}

/// A candidate split and its regularized gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, reg: &TreeReg) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + reg.lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - reg.gamma
}

/// Highest-gain split of the points in `idx`, scanning every feature in order
/// and every midpoint between consecutive distinct values. Earlier candidates
/// win ties. Returns `None` when no candidate exists.
pub fn best_split(x: &Array2<f64>, g: &[f64], h: &[f64], idx: &[usize], reg: &TreeReg) -> Option<SplitChoice> {
    let (gt, ht) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]));
    let mut best: Option<SplitChoice> = None;
    let mut order = idx.to_vec();
    for f in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
        let (mut gl, mut hl) = (0.0, 0.0);
        for k in 0..order.len() - 1 {
            let i = order[k];
            gl += g[i];
            hl += h[i];
            let (lo, hi) = (x[[i, f]], x[[order[k + 1], f]]);
            if lo == hi {
                continue;
            }
            let gain = split_gain(gl, hl, gt - gl, ht - hl, reg);
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice { feature: f, threshold: 0.5 * (lo + hi), gain });
            }
        }
    }
    best
}

/// Grows one tree on gradients `g` and hessians `h`.
pub fn build_tree(x: &Array2<f64>, g: &[f64], h: &[f64], reg: &TreeReg) -> Result<RegressionTree, GbtError> {
    if x.nrows() == 0 {
        return Err(GbtError::EmptyData);
    }
    if g.len() != x.nrows() || h.len() != x.nrows() {
        return Err(GbtError::LengthMismatch(x.nrows(), g.len().min(h.len())));
    }
    let idx: Vec<usize> = (0..x.nrows()).collect();
    Ok(RegressionTree { root: grow(x, g, h, &idx, reg, 0) })
}

fn grow(x: &Array2<f64>, g: &[f64], h: &[f64], idx: &[usize], reg: &TreeReg, depth: usize) -> TreeNode {
    let (gt, ht) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + g[i], b + h[i]));
    let leaf = TreeNode::Leaf { weight: leaf_weight(gt, ht, reg.lambda) };
    if depth >= reg.max_depth || idx.len() < 2 {
        return leaf;
    }
    match best_split(x, g, h, idx, reg) {
        Some(s) if s.gain > 0.0 => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[[i, s.feature]] < s.threshold);
            TreeNode::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(x, g, h, &l, reg, depth + 1)),
                right: Box::new(grow(x, g, h, &r, reg, depth + 1)),
            }
        }
        _ => leaf,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub patience: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig { rounds: 500, learning_rate: 0.1, max_depth: 3, lambda: 1.0, gamma: 0.0, patience: 50 }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), GbtError> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(GbtError::InvalidConfig(format!("learning rate {} outside (0, 1]", self.learning_rate)));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(GbtError::InvalidConfig("penalties must be non-negative".into()));
        }
        Ok(())
    }

    fn reg(&self) -> TreeReg {
        TreeReg { lambda: self.lambda, gamma: self.gamma, max_depth: self.max_depth }
    }
}

/// Weighted rows for [`boost`].
#[derive(Clone, Copy, Debug)]
pub struct GbtData<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a [f64],
    pub w: &'a [f64],
}

impl GbtData<'_> {
    fn check(&self) -> Result<(), GbtError> {
        if self.y.len() != self.x.nrows() || self.w.len() != self.x.nrows() {
            return Err(GbtError::LengthMismatch(self.x.nrows(), self.y.len()));
        }
        Ok(())
    }

    fn loss(&self, pred: &[f64]) -> f64 {
        let sw: f64 = self.w.iter().sum();
        let se: f64 = pred.iter().zip(self.y).zip(self.w).map(|((p, y), w)| w * (p - y).powi(2)).sum();
        se / sw
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub config: GbtConfig,
    /// Weighted MSE on the training rows after each round, starting with
    /// the base score.
    pub train_trace: Vec<f64>,
    pub valid_trace: Vec<f64>,
}

impl GbtModel {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_all(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.predict(r)).collect()
    }

    /// Leaf weights plus split thresholds, for size comparisons.
    pub fn n_parameters(&self) -> usize {
        1 + self.trees.iter().map(|t| 2 * t.n_leaves() - 1).sum::<usize>()
    }
}

/// Fits an additive tree model on `train`. With a non-empty `valid` set,
/// boosting stops once validation loss has not improved for `patience`
/// rounds and the model is cut back to its best round.
pub fn boost(train: GbtData, valid: Option<GbtData>, config: &GbtConfig) -> Result<GbtModel, GbtError> {
    config.validate()?;
    train.check()?;
    if train.x.nrows() == 0 {
        return Err(GbtError::EmptyData);
    }
    let valid = match valid {
        Some(v) if v.x.nrows() > 0 => {
            v.check()?;
            Some(v)
        }
        _ => None,
    };
    let sw: f64 = train.w.iter().sum();
    let base = train.y.iter().zip(train.w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let reg = config.reg();
    let mut pred = vec![base; train.y.len()];
    let mut vpred = valid.map(|v| vec![base; v.y.len()]).unwrap_or_default();
    let mut trees = Vec::new();
    let mut train_trace = vec![train.loss(&pred)];
    let mut valid_trace: Vec<f64> = valid.iter().map(|v| v.loss(&vpred)).collect();
    let (mut best_loss, mut best_rounds) = (valid_trace.first().copied().unwrap_or(f64::INFINITY), 0);
    let h: Vec<f64> = train.w.to_vec();
    for round in 1..=config.rounds {
        let g: Vec<f64> = pred.iter().zip(train.y).zip(train.w).map(|((p, y), w)| w * (p - y)).collect();
        let tree = build_tree(train.x, &g, &h, &reg)?;
        for (p, row) in pred.iter_mut().zip(train.x.rows()) {
            *p += config.learning_rate * tree.predict(row);
        }
        train_trace.push(train.loss(&pred));
        if let Some(v) = valid {
            for (p, row) in vpred.iter_mut().zip(v.x.rows()) {
                *p += config.learning_rate * tree.predict(row);
            }
            let l = v.loss(&vpred);
            valid_trace.push(l);
            if l < best_loss {
                best_loss = l;
                best_rounds = round;
            }
        }
        trees.push(tree);
        if valid.is_some() && round - best_rounds >= config.patience {
            break;
        }
    }
    if valid.is_some() {
        trees.truncate(best_rounds);
    }
    Ok(GbtModel { base, learning_rate: config.learning_rate, trees, config: *config, train_trace, valid_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Axis};
    use proptest::prelude::*;

    fn cfg(rounds: usize, depth: usize, lambda: f64) -> GbtConfig {
        GbtConfig { rounds, learning_rate: 1.0, max_depth: depth, lambda, gamma: 0.0, patience: 50 }
    }

    fn data<'a>(x: &'a Array2<f64>, y: &'a [f64], w: &'a [f64]) -> GbtData<'a> {
        GbtData { x, y, w }
    }

    #[test]
    fn two_stump_hand_example() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = [1.0, 1.0, 3.0, 5.0];
        let w = [1.0; 4];
        let m = boost(data(&x, &y, &w), None, &cfg(2, 1, 0.0)).unwrap();
        assert_eq!(m.base, 2.5);
        match &m.trees[0].root {
            TreeNode::Split { threshold, left, right, .. } => {
                assert_eq!(*threshold, 2.5);
                assert_eq!(**left, TreeNode::Leaf { weight: -1.5 });
                assert_eq!(**right, TreeNode::Leaf { weight: 1.5 });
            }
            other => panic!("expected split, got {other:?}"),
        }
        match &m.trees[1].root {
            TreeNode::Split { threshold, .. } => assert_eq!(*threshold, 3.5),
            other => panic!("expected split, got {other:?}"),
        }
        let p = m.predict_all(&x);
        for (a, b) in p.iter().zip([2.0 / 3.0, 2.0 / 3.0, 11.0 / 3.0, 5.0]) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_rounds_predict_weighted_mean() {
        let x = array![[1.0], [2.0]];
        let m = boost(data(&x, &[1.0, 4.0], &[2.0, 1.0]), None, &cfg(0, 2, 1.0)).unwrap();
        assert_eq!(m.predict(x.row(0)), 2.0);
        assert_eq!(m.predict(array![100.0].view()), 2.0);
    }

    #[test]
    fn constant_targets_give_one_leaf() {
        let x = array![[1.0], [2.0], [3.0]];
        let g = [-2.0, -2.0, -2.0];
        let h = [1.0; 3];
        let t = build_tree(&x, &g, &h, &TreeReg { lambda: 0.0, gamma: 0.0, max_depth: 3 }).unwrap();
        assert_eq!(t.root, TreeNode::Leaf { weight: 2.0 });
        let t = build_tree(&x, &g, &h, &TreeReg { lambda: 3.0, gamma: 0.0, max_depth: 3 }).unwrap();
        assert_eq!(t.root, TreeNode::Leaf { weight: 1.0 });
    }

    #[test]
    fn two_separable_points_fit_exactly() {
        let x = array![[0.0], [1.0]];
        let y = [3.0, -1.0];
        let m = boost(data(&x, &y, &[1.0, 1.0]), None, &cfg(1, 1, 0.0)).unwrap();
        assert_eq!(m.predict_all(&x), vec![3.0, -1.0]);
    }

    #[test]
    fn huge_leaf_penalty_never_splits() {
        let x = array![[0.0], [1.0], [2.0]];
        let g = [5.0, -1.0, -9.0];
        let t = build_tree(&x, &g, &[1.0; 3], &TreeReg { lambda: 0.0, gamma: 1e12, max_depth: 4 }).unwrap();
        assert_eq!(t.n_leaves(), 1);
    }

    #[test]
    fn threshold_boundary_goes_right() {
        let t = RegressionTree {
            root: TreeNode::Split {
                feature: 0,
                threshold: 1.0,
                left: Box::new(TreeNode::Leaf { weight: -1.0 }),
                right: Box::new(TreeNode::Leaf { weight: 1.0 }),
            },
        };
        assert_eq!(t.predict(array![1.0].view()), 1.0);
        assert_eq!(t.predict(array![0.999].view()), -1.0);
    }

    #[test]
    fn two_tree_sum() {
        let stump = |f, th, l, r| RegressionTree {
            root: TreeNode::Split {
                feature: f,
                threshold: th,
                left: Box::new(TreeNode::Leaf { weight: l }),
                right: Box::new(TreeNode::Leaf { weight: r }),
            },
        };
        let m = GbtModel {
            base: 10.0,
            learning_rate: 0.5,
            trees: vec![stump(0, 0.5, 2.0, 4.0), stump(1, 3.0, -6.0, 8.0)],
            config: GbtConfig::default(),
            train_trace: vec![],
            valid_trace: vec![],
        };
        // x = (0.7, 1.0): first tree right (4), second tree left (-6)
        assert_eq!(m.predict(array![0.7, 1.0].view()), 10.0 + 0.5 * (4.0 - 6.0));
    }

    #[test]
    fn empty_data_is_an_error() {
        let x = Array2::<f64>::zeros((0, 2));
        assert_eq!(build_tree(&x, &[], &[], &TreeReg { lambda: 1.0, gamma: 0.0, max_depth: 2 }), Err(GbtError::EmptyData));
        assert_eq!(boost(data(&x, &[], &[]), None, &cfg(3, 2, 1.0)).unwrap_err(), GbtError::EmptyData);
    }

    #[test]
    fn duplicated_data_equals_doubled_weights() {
        let x = array![[0.3, 1.0], [0.1, 2.0], [0.9, 0.5], [0.4, 0.2], [0.8, 0.9]];
        let y = [1.0, 2.0, 0.5, 3.0, 1.5];
        let w = [1.0, 0.1, 1.0, 0.1, 1.0];
        let c = GbtConfig { rounds: 5, learning_rate: 0.5, max_depth: 2, lambda: 0.0, gamma: 0.0, patience: 50 };
        let once = boost(data(&x, &y, &w), None, &c).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let w2: Vec<f64> = w.iter().chain(&w).copied().collect();
        let twice = boost(data(&x2, &y2, &w2), None, &c).unwrap();
        for (a, b) in once.predict_all(&x).iter().zip(twice.predict_all(&x)) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn monotone_transform_of_unused_feature_is_irrelevant() {
        // feature 1 is noise that is never informative once transformed monotonically
        let x = array![[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [3.0, 5.0], [4.0, 4.0]];
        let y = [0.0, 0.0, 1.0, 1.0, 1.0];
        let w = [1.0; 5];
        let c = GbtConfig { rounds: 4, learning_rate: 0.5, max_depth: 2, lambda: 0.5, gamma: 0.0, patience: 50 };
        let a = boost(data(&x, &y, &w), None, &c).unwrap();
        let mut xt = x.clone();
        xt.column_mut(1).mapv_inplace(|v| v.powi(3) + 7.0);
        let b = boost(data(&xt, &y, &w), None, &c).unwrap();
        assert_eq!(a.predict_all(&x), b.predict_all(&xt));
    }

    #[test]
    fn early_stopping_keeps_best_round() {
        let x = Array2::from_shape_fn((40, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let vx = Array2::from_shape_fn((10, 1), |(i, _)| i as f64 + 0.5);
        let vy = vec![0.5; 10];
        let c = GbtConfig { rounds: 200, learning_rate: 0.3, max_depth: 3, lambda: 0.0, gamma: 0.0, patience: 5 };
        let m = boost(data(&x, &y, &[1.0; 40]), Some(data(&vx, &vy, &[1.0; 10])), &c).unwrap();
        let best = m.valid_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(m.valid_trace[m.trees.len()], best);
        assert!(m.valid_trace.len() < 201);
    }

    fn exhaustive(x: &Array2<f64>, g: &[f64], h: &[f64], reg: &TreeReg) -> Option<f64> {
        let mut best: Option<f64> = None;
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for p in vals.windows(2) {
                let th = 0.5 * (p[0] + p[1]);
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..x.nrows() {
                    if x[[i, f]] < th {
                        gl += g[i];
                        hl += h[i];
                    } else {
                        gr += g[i];
                        hr += h[i];
                    }
                }
                let gain = split_gain(gl, hl, gr, hr, reg);
                best = Some(best.map_or(gain, |b: f64| b.max(gain)));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn greedy_matches_enumeration(
            rows in prop::collection::vec(prop::collection::vec(0u8..6, 2), 2..8),
            g in prop::collection::vec(-3.0f64..3.0, 8),
            h in prop::collection::vec(0.1f64..2.0, 8),
            lambda in 0.0f64..2.0,
        ) {
            let n = rows.len();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| rows[i][j] as f64);
            let reg = TreeReg { lambda, gamma: 0.0, max_depth: 1 };
            let idx: Vec<usize> = (0..n).collect();
            let greedy = best_split(&x, &g[..n], &h[..n], &idx, &reg).map(|s| s.gain);
            let oracle = exhaustive(&x, &g[..n], &h[..n], &reg);
            match (greedy, oracle) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs())),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }

        #[test]
        fn training_loss_never_increases(
            xs in prop::collection::vec(0.0f64..1.0, 3..30),
            ys in prop::collection::vec(-5.0f64..5.0, 30),
            nu in 0.05f64..1.0,
            lambda in 0.0f64..3.0,
        ) {
            let n = xs.len();
            let x = Array2::from_shape_fn((n, 1), |(i, _)| xs[i]);
            let w: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.1 } else { 1.0 }).collect();
            let c = GbtConfig { rounds: 10, learning_rate: nu, max_depth: 2, lambda, gamma: 0.0, patience: 50 };
            let m = boost(data(&x, &ys[..n], &w), None, &c).unwrap();
            for p in m.train_trace.windows(2) {
                prop_assert!(p[1] <= p[0] + 1e-12 * p[0].abs().max(1.0));
            }
        }
    }
}
