//! Tape-based reverse-mode differentiation over dense 2-D arrays.
//!
//! Nodes are appended to a [`Tape`] in evaluation order, so the tape itself
//! is a topological ordering and the graph is acyclic by construction.
//! Every operation records the indices of its operands and the backward pass
//! walks the tape in reverse, accumulating gradients.

use ndarray::{s, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("loss must be a 1x1 value, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("gather index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    MaxScalar(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Square(Var),
    Sum(Var),
    RowSum(Var),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// A computation graph with its values and gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Gradient of a leaf after [`Tape::backward`]; zeros for leaves off
    /// every path to the loss. Intermediate gradients are not retained.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[v.0].value.dim()),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GraphError::ShapeMismatch { op, left: sa, right: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(GraphError::ShapeMismatch { op: "matmul", left: sa, right: sb });
        }
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    /// Adds a 1xm row to every row of an nxm value (bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, GraphError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(GraphError::ShapeMismatch { op: "add_row", left: sa, right: sr });
        }
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(v, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Result<Var, GraphError> {
        let (sa, sc) = (self.shape(a), shape(&c));
        if sa != sc {
            return Err(GraphError::ShapeMismatch { op: "mul_const", left: sa, right: sc });
        }
        let v = self.value(a) * &c;
        let rg = self.rg(a);
        Ok(self.push(v, Op::MulConst(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// Elementwise `max(x, c)`; the gradient flows only where `x > c`.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x.max(c));
        let rg = self.rg(a);
        self.push(v, Op::MaxScalar(a, c), rg)
    }

    /// Column-wise concatenation of values with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(GraphError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GraphError> {
        let sa = self.shape(a);
        if start >= end || end > sa.1 {
            return Err(GraphError::ShapeMismatch {
                op: "slice",
                left: sa,
                right: (start, end),
            });
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(v, Op::Slice(a, start), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    /// Sum over columns, giving an nx1 value.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(v, Op::RowSum(a), rg)
    }

    /// Selects rows of a table; the backward pass scatter-adds into them.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var, GraphError> {
        let n = self.shape(table).0;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(GraphError::IndexOutOfRange { index: bad, rows: n });
        }
        let v = self.value(table).select(Axis(0), rows);
        let rg = self.rg(table);
        Ok(self.push(v, Op::Gather(table, rows.to_vec()), rg))
    }

    fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a 1x1 loss. Gradients from any previous call are
    /// discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<(), GraphError> {
        let sl = self.shape(loss);
        if sl != (1, 1) {
            return Err(GraphError::NonScalarLoss(sl));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let rg = |v: &Var| self.nodes[v.0].requires_grad;
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if rg(a) {
                        Self::accumulate(&mut grads, *a, g.dot(&val(b).t()));
                    }
                    if rg(b) {
                        Self::accumulate(&mut grads, *b, val(a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if rg(b) {
                        Self::accumulate(&mut grads, *b, g.clone());
                    }
                    if rg(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::AddRow(a, row) => {
                    if rg(row) {
                        Self::accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if rg(b) {
                        Self::accumulate(&mut grads, *b, -&g);
                    }
                    if rg(a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        Self::accumulate(&mut grads, *a, &g * val(b));
                    }
                    if rg(b) {
                        Self::accumulate(&mut grads, *b, &g * val(a));
                    }
                }
                Op::MulConst(a, c) => Self::accumulate(&mut grads, *a, &g * c),
                Op::Scale(a, k) => Self::accumulate(&mut grads, *a, &g * *k),
                Op::AddScalar(a) => Self::accumulate(&mut grads, *a, g.clone()),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    ndarray::Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::MaxScalar(a, c) => {
                    let mut d = g.clone();
                    ndarray::Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                        if x <= *c {
                            *d = 0.0;
                        }
                    });
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = val(p).ncols();
                        if rg(p) {
                            Self::accumulate(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                Op::Slice(a, start) => {
                    let mut d = Array2::zeros(val(a).dim());
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => Self::accumulate(&mut grads, *a, &g * &(val(a) * 2.0)),
                Op::Sum(a) => {
                    let k = g[[0, 0]];
                    Self::accumulate(&mut grads, *a, Array2::from_elem(val(a).dim(), k));
                }
                Op::RowSum(a) => {
                    let d = g.broadcast(val(a).dim()).expect("nx1 broadcasts to nxm").to_owned();
                    Self::accumulate(&mut grads, *a, d);
                }
                Op::Gather(table, rows) => {
                    let mut d = Array2::zeros(val(table).dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(k);
                    }
                    Self::accumulate(&mut grads, *table, d);
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.constant(array![[-1.0, 0.0, 2.0]]);
        let y = t.relu(x);
        assert_eq!(t.value(y), &array![[0.0, 0.0, 2.0]]);
    }

    #[test]
    fn relu_subgradient_is_zero_at_zero() {
        let mut t = Tape::new();
        let x = t.param(array![[-1.0, 0.0, 2.0]]);
        let y = t.relu(x);
        let l = t.sum(y);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x), array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn identity_matmul_gradient() {
        let mut t = Tape::new();
        let i = t.constant(Array2::eye(3));
        let x = t.param(array![[1.0], [2.0], [3.0]]);
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let l = t.sum(y);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x), Array2::<f64>::ones((3, 1)));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        let sq = t.square(x);
        let l = t.sum(sq);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x), array![[2.0, 4.0]]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        let c = t.constant(array![[5.0]]);
        let _unused = t.square(x);
        t.backward(c).unwrap();
        assert_eq!(t.grad(x), Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        assert_eq!(t.backward(x), Err(GraphError::NonScalarLoss((1, 2))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.param(Array2::zeros((2, 3)));
        let b = t.param(Array2::zeros((2, 3)));
        assert!(matches!(t.matmul(a, b), Err(GraphError::ShapeMismatch { op: "matmul", .. })));
        let c = t.param(Array2::zeros((3, 2)));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn backward_twice_resets_instead_of_accumulating() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0]]);
        let l = t.square(x);
        t.backward(l).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x), array![[6.0]]);
    }

    #[test]
    fn gather_scatters_gradient_back() {
        let mut t = Tape::new();
        let table = t.param(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let g = t.gather(table, &[2, 0, 2]).unwrap();
        assert_eq!(t.value(g), &array![[5.0, 6.0], [1.0, 2.0], [5.0, 6.0]]);
        let l = t.sum(g);
        t.backward(l).unwrap();
        assert_eq!(t.grad(table), array![[1.0, 1.0], [0.0, 0.0], [2.0, 2.0]]);
        assert!(t.gather(table, &[3]).is_err());
    }

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Builds a scalar from every op and the given leaves.
    fn every_op(t: &mut Tape, x: Var, w: Var, b: Var, table: Var) -> Var {
        let h = t.matmul(x, w).unwrap(); // 4x3
        let h = t.add_row(h, b).unwrap();
        let r = t.relu(h);
        let m = t.max_scalar(h, 0.1);
        let p = t.mul(r, m).unwrap();
        let q = t.sub(p, h).unwrap();
        let q = t.add(q, m).unwrap();
        let g = t.gather(table, &[1, 0, 1, 1]).unwrap(); // 4x2
        let c = t.concat(&[q, g]).unwrap(); // 4x5
        let sl = t.slice(c, 1, 4).unwrap(); // 4x3
        let k = Array2::from_shape_fn((4, 3), |(i, j)| 0.5 + i as f64 * 0.1 - j as f64 * 0.2);
        let sl = t.mul_const(sl, k).unwrap();
        let rs = t.row_sum(sl);
        let rs = t.add_scalar(rs, 0.3);
        let sq = t.square(rs);
        let s = t.sum(sq);
        t.scale(s, 0.7)
    }

    #[test]
    fn every_op_matches_central_differences() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..20 {
            let leaves = [
                random(&mut rng, 4, 2),
                random(&mut rng, 2, 3),
                random(&mut rng, 1, 3),
                random(&mut rng, 2, 2),
            ];
            let eval = |ls: &[Array2<f64>; 4]| {
                let mut t = Tape::new();
                let v: Vec<Var> = ls.iter().map(|a| t.param(a.clone())).collect();
                let out = every_op(&mut t, v[0], v[1], v[2], v[3]);
                (t, v, out)
            };
            let (mut t, vars, out) = eval(&leaves);
            t.backward(out).unwrap();
            let h = 1e-6;
            for (li, var) in vars.iter().enumerate() {
                let analytic = t.grad(*var);
                for idx in ndarray::indices(leaves[li].dim()) {
                    let mut plus = leaves.clone();
                    plus[li][idx] += h;
                    let mut minus = leaves.clone();
                    minus[li][idx] -= h;
                    let (tp, _, op) = eval(&plus);
                    let (tm, _, om) = eval(&minus);
                    let fd = (tp.scalar(op) - tm.scalar(om)) / (2.0 * h);
                    let a = analytic[idx];
                    let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    assert!(err < 1e-5, "leaf {li} {idx:?}: analytic {a} fd {fd}");
                }
            }
        }
    }
}
