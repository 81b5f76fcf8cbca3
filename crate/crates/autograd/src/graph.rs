//! Define-by-run computation graph over dense row-major `f64` matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse insertion order, which is a valid topological
//! order because a node can only reference nodes created before it.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};

use crate::params::{Gradients, ParamId, ParamStore};

pub type Matrix = Array2<f64>;

/// Sentinel for `gather` indices that produce a zero (padding) entry.
pub const PAD: usize = usize::MAX;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sigmoid(Var),
    Maximum(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Rc<[usize]>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    LayerNormRows(Var, f64),
    L2NormalizeRows(Var, f64),
    Huber(Var, Var, f64),
    BceWithLogits(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Build one per forward pass; discard after `backward`.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant input. Never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Copy of `v`'s value as a fresh constant; gradient does not flow back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a + row` with `row` (1×m) broadcast over the rows of `a` (n×m).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "add_row: expected a 1x{m} row");
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a ⊙ row` with `row` (1×m) broadcast over the rows of `a` (n×m).
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (_, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "mul_row: expected a 1x{m} row");
        let value = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::MulRow(a, row), rg)
    }

    /// `a * s` with `s` a 1×1 node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar: expected a 1x1 scale");
        let k = self.scalar_value(s);
        let value = self.value(a) * k;
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::MulScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let rg = self.rg(a);
        self.push(value, Op::AddConst(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Element-wise maximum. Ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "maximum: shape mismatch");
        let value = Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &y| x.max(y));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Maximum(a, b), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![start..end, ..])
            .to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Builds a `rows×cols` matrix whose flat entry `k` is the flat entry
    /// `indices[k]` of `a`, or zero when `indices[k] == PAD`.
    pub fn gather(&mut self, a: Var, indices: Rc<[usize]>, rows: usize, cols: usize) -> Var {
        assert_eq!(indices.len(), rows * cols, "gather: index count mismatch");
        let src = self.value(a);
        let src = src.as_slice().expect("graph values are standard layout");
        let data: Vec<f64> = indices
            .iter()
            .map(|&i| if i == PAD { 0.0 } else { src[i] })
            .collect();
        let value = Array2::from_shape_vec((rows, cols), data).expect("gather shape");
        let rg = self.rg(a);
        self.push(value, Op::Gather(a, indices), rg)
    }

    /// Selects whole rows of `a` in the given order.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let (_, m) = self.shape(a);
        let indices: Vec<usize> = rows
            .iter()
            .flat_map(|&r| (r * m)..(r * m + m))
            .collect();
        self.gather(a, indices.into(), rows.len(), m)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Array2::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Column-wise mean over rows, giving a 1×m row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows: empty matrix")
            .insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let (mu, sigma) = row_stats(row.view(), eps);
            row.mapv_inplace(|x| (x - mu) / sigma);
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNormRows(a, eps), rg)
    }

    /// Rows divided by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt().max(eps);
            row.mapv_inplace(|x| x / n);
        }
        let rg = self.rg(a);
        self.push(value, Op::L2NormalizeRows(a, eps), rg)
    }

    /// Element-wise Huber penalty of `pred - target` with threshold `delta`.
    pub fn huber(&mut self, pred: Var, target: Var, delta: f64) -> Var {
        assert_eq!(self.shape(pred), self.shape(target), "huber: shape mismatch");
        let value = Zip::from(self.value(pred))
            .and(self.value(target))
            .map_collect(|&p, &t| {
                let r = (p - t).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            });
        let rg = self.rg(pred) || self.rg(target);
        self.push(value, Op::Huber(pred, target, delta), rg)
    }

    /// Element-wise binary cross-entropy on logits against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Var {
        assert_eq!(
            self.shape(logits),
            self.shape(targets),
            "bce_with_logits: shape mismatch"
        );
        let value = Zip::from(self.value(logits))
            .and(self.value(targets))
            .map_collect(|&x, &t| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
        let rg = self.rg(logits) || self.rg(targets);
        self.push(value, Op::BceWithLogits(logits, targets), rg)
    }

    /// Reverse pass from a 1×1 `loss`. Returns gradients for every parameter
    /// that the loss depends on.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be 1x1");
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[i] = Some(gy);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = gy.dot(&self.value(*b).t());
                        acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&gy);
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        let ga = gy.dot(self.value(*b));
                        acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = gy.t().dot(self.value(*a));
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        acc(&mut grads, *b, gy.clone());
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, gy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        acc(&mut grads, *b, -&gy);
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, gy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, &gy * self.value(*b));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, &gy * self.value(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let gr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *row, gr);
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, gy);
                    }
                }
                Op::MulRow(a, row) => {
                    if self.rg(*row) {
                        let gr = (&gy * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *row, gr);
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, &gy * self.value(*row));
                    }
                }
                Op::MulScalar(a, s) => {
                    if self.rg(*s) {
                        let gs = (&gy * self.value(*a)).sum();
                        acc(&mut grads, *s, Array2::from_elem((1, 1), gs));
                    }
                    if self.rg(*a) {
                        let k = self.scalar_value(*s);
                        acc(&mut grads, *a, gy * k);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, gy * *k),
                Op::AddConst(a) => acc(&mut grads, *a, gy),
                Op::Relu(a) => {
                    let ga = Zip::from(&gy)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = Zip::from(&gy)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Maximum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let ga = Zip::from(&gy)
                            .and(va)
                            .and(vb)
                            .map_collect(|&g, &x, &y| if x >= y { g } else { 0.0 });
                        acc(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = Zip::from(&gy)
                            .and(va)
                            .and(vb)
                            .map_collect(|&g, &x, &y| if x >= y { 0.0 } else { g });
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &gy * y;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let s = grow.sum();
                        Zip::from(&mut grow).and(&yrow).for_each(|g, &p| *g -= p * s);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = gy;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let s = grow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &ly| *g -= ly.exp() * s);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, gy.t().to_owned()),
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.shape(p).0;
                        if self.rg(p) {
                            let gp = gy.slice(ndarray::s![start..start + n, ..]).to_owned();
                            acc(&mut grads, p, gp);
                        }
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.shape(p).1;
                        if self.rg(p) {
                            let gp = gy.slice(ndarray::s![.., start..start + n]).to_owned();
                            acc(&mut grads, p, gp);
                        }
                        start += n;
                    }
                }
                Op::SliceRows(a, start) => {
                    let target = grads[a.0].get_or_insert_with(|| Array2::zeros(self.shape(*a)));
                    let n = gy.nrows();
                    let mut view = target.slice_mut(ndarray::s![*start..*start + n, ..]);
                    view += &gy;
                }
                Op::SliceCols(a, start) => {
                    let target = grads[a.0].get_or_insert_with(|| Array2::zeros(self.shape(*a)));
                    let n = gy.ncols();
                    let mut view = target.slice_mut(ndarray::s![.., *start..*start + n]);
                    view += &gy;
                }
                Op::Gather(a, indices) => {
                    let target = grads[a.0].get_or_insert_with(|| Array2::zeros(self.shape(*a)));
                    let flat = target.as_slice_mut().expect("standard layout");
                    for (&idx, &g) in indices.iter().zip(gy.iter()) {
                        if idx != PAD {
                            flat[idx] += g;
                        }
                    }
                }
                Op::Sum(a) => {
                    let g = gy[[0, 0]];
                    acc(&mut grads, *a, Array2::from_elem(self.shape(*a), g));
                }
                Op::Mean(a) => {
                    let shape = self.shape(*a);
                    let g = gy[[0, 0]] / (shape.0 * shape.1) as f64;
                    acc(&mut grads, *a, Array2::from_elem(shape, g));
                }
                Op::MeanRows(a) => {
                    let (n, _) = self.shape(*a);
                    let row = &gy / n as f64;
                    let ga = row.broadcast(self.shape(*a)).expect("broadcast").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNormRows(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let m = x.ncols() as f64;
                    let mut ga = Array2::zeros(x.dim());
                    for (((xrow, yrow), grow), mut out) in x
                        .rows()
                        .into_iter()
                        .zip(y.rows())
                        .zip(gy.rows())
                        .zip(ga.rows_mut())
                    {
                        let (_, sigma) = row_stats(xrow, *eps);
                        let mean_g = grow.sum() / m;
                        let mean_gy = grow.dot(&yrow) / m;
                        Zip::from(&mut out)
                            .and(&grow)
                            .and(&yrow)
                            .for_each(|o, &g, &yh| *o = (g - mean_g - yh * mean_gy) / sigma);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::L2NormalizeRows(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = Array2::zeros(x.dim());
                    for (((xrow, yrow), grow), mut out) in x
                        .rows()
                        .into_iter()
                        .zip(y.rows())
                        .zip(gy.rows())
                        .zip(ga.rows_mut())
                    {
                        let norm = xrow.dot(&xrow).sqrt();
                        if norm > *eps {
                            let proj = yrow.dot(&grow);
                            Zip::from(&mut out)
                                .and(&grow)
                                .and(&yrow)
                                .for_each(|o, &g, &yv| *o = (g - yv * proj) / norm);
                        } else {
                            Zip::from(&mut out).and(&grow).for_each(|o, &g| *o = g / eps);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Huber(pred, target, delta) => {
                    let r = self.value(*pred) - self.value(*target);
                    let d = r.mapv(|x| x.clamp(-*delta, *delta)) * &gy;
                    if self.rg(*target) {
                        acc(&mut grads, *target, -&d);
                    }
                    if self.rg(*pred) {
                        acc(&mut grads, *pred, d);
                    }
                }
                Op::BceWithLogits(logits, targets) => {
                    let x = self.value(*logits);
                    let t = self.value(*targets);
                    if self.rg(*logits) {
                        let gl = Zip::from(x)
                            .and(t)
                            .and(&gy)
                            .map_collect(|&x, &t, &g| (sigmoid(x) - t) * g);
                        acc(&mut grads, *logits, gl);
                    }
                    if self.rg(*targets) {
                        let gt = Zip::from(x).and(&gy).map_collect(|&x, &g| -x * g);
                        acc(&mut grads, *targets, gt);
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                out.insert(id, g);
            }
        }
        Gradients::from_map(out)
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn row_stats(row: ndarray::ArrayView1<'_, f64>, eps: f64) -> (f64, f64) {
    let m = row.len() as f64;
    let mu = row.sum() / m;
    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m;
    (mu, (var + eps).sqrt())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
