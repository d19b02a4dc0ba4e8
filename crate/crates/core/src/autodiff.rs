//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records a DAG of matrix operations in insertion order, which is also a
//! topological order. Shapes are checked when an operation is recorded, so a tape that
//! builds successfully can only fail to evaluate on unbound or mis-shaped inputs or on
//! non-finite arithmetic. There is no broadcasting: every operation has one fixed shape
//! rule.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{softmax_rows, Matrix};

/// Column norms below this are treated as zero by the cosine distance.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExprId(usize);

impl ExprId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Constant,
    MatMul(ExprId, ExprId),
    Add(ExprId, ExprId),
    Hadamard(ExprId, ExprId),
    Scale(ExprId, f64),
    Relu(ExprId),
    Sigmoid(ExprId),
    Transpose(ExprId),
    /// `[a | b]`: each output row is the concatenation of the matching rows of `a` and `b`.
    RowConcat(ExprId, ExprId),
    Sum(ExprId),
    /// `1 x cols` row of column l2 norms.
    ColumnNorms(ExprId),
    SoftmaxRows(ExprId),
    /// Mean negative log-likelihood of row-wise softmax against integer targets.
    SoftmaxNll(ExprId, Vec<usize>),
    /// `sum_i (1 - cos(a_i, b_i))` over columns, with the zero-norm guard.
    CosineColumnDistance(ExprId, ExprId),
    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
    NormalizeAdjacency(ExprId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: (usize, usize),
    value: Option<Matrix>,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every input of the tape.
#[derive(Debug, Default)]
pub struct Gradients {
    by_input: HashMap<ExprId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ExprId) -> Option<&Matrix> {
        self.by_input.get(&id)
    }

    pub fn take(&mut self, id: ExprId) -> Option<Matrix> {
        self.by_input.remove(&id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: ExprId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn op(&self, id: ExprId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Cached value from the last [`Tape::evaluate`], or the value of a constant.
    pub fn value(&self, id: ExprId) -> Option<&Matrix> {
        self.nodes[id.0].value.as_ref()
    }

    fn push(&mut self, op: Op, shape: (usize, usize), value: Option<Matrix>) -> ExprId {
        let needs_grad = match &op {
            Op::Input => true,
            Op::Constant => false,
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            value,
            needs_grad,
        });
        ExprId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, rows: usize, cols: usize) -> ExprId {
        self.push(Op::Input, (rows, cols), None)
    }

    pub fn constant(&mut self, value: Matrix) -> ExprId {
        let shape = value.dim();
        self.push(Op::Constant, shape, Some(value))
    }

    pub fn matmul(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(shape_err!("matmul {m}x{k} by {k2}x{n}"));
        }
        Ok(self.push(Op::MatMul(a, b), (m, n), None))
    }

    fn same_shape(&self, what: &str, a: ExprId, b: ExprId) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!("{what} of {:?} and {:?}", sa, sb));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let shape = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape, None))
    }

    /// `a - b`, recorded as `a + (-1) * b`.
    pub fn sub(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn hadamard(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let shape = self.same_shape("hadamard", a, b)?;
        Ok(self.push(Op::Hadamard(a, b), shape, None))
    }

    pub fn scale(&mut self, a: ExprId, factor: f64) -> ExprId {
        let shape = self.shape(a);
        self.push(Op::Scale(a, factor), shape, None)
    }

    pub fn relu(&mut self, a: ExprId) -> ExprId {
        let shape = self.shape(a);
        self.push(Op::Relu(a), shape, None)
    }

    pub fn sigmoid(&mut self, a: ExprId) -> ExprId {
        let shape = self.shape(a);
        self.push(Op::Sigmoid(a), shape, None)
    }

    pub fn transpose(&mut self, a: ExprId) -> ExprId {
        let (r, c) = self.shape(a);
        self.push(Op::Transpose(a), (c, r), None)
    }

    pub fn row_concat(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(shape_err!("row-concat of {ra} and {rb} rows"));
        }
        Ok(self.push(Op::RowConcat(a, b), (ra, ca + cb), None))
    }

    pub fn sum(&mut self, a: ExprId) -> ExprId {
        self.push(Op::Sum(a), (1, 1), None)
    }

    pub fn column_norms(&mut self, a: ExprId) -> ExprId {
        let cols = self.shape(a).1;
        self.push(Op::ColumnNorms(a), (1, cols), None)
    }

    pub fn softmax_rows(&mut self, a: ExprId) -> ExprId {
        let shape = self.shape(a);
        self.push(Op::SoftmaxRows(a), shape, None)
    }

    pub fn softmax_nll(&mut self, logits: ExprId, targets: Vec<usize>) -> Result<ExprId> {
        let (rows, classes) = self.shape(logits);
        if rows == 0 || targets.len() != rows {
            return Err(shape_err!(
                "softmax-nll over {rows} rows with {} targets",
                targets.len()
            ));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= classes) {
            return Err(shape_err!("target class {t} outside 0..{classes}"));
        }
        Ok(self.push(Op::SoftmaxNll(logits, targets), (1, 1), None))
    }

    pub fn cosine_column_distance(&mut self, a: ExprId, b: ExprId) -> Result<ExprId> {
        self.same_shape("cosine-column-distance", a, b)?;
        Ok(self.push(Op::CosineColumnDistance(a, b), (1, 1), None))
    }

    pub fn normalize_adjacency(&mut self, a: ExprId) -> Result<ExprId> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(shape_err!("normalize-adjacency of non-square {r}x{c}"));
        }
        Ok(self.push(Op::NormalizeAdjacency(a), (r, c), None))
    }

    /// Evaluates every node up to `root` and returns the root's value.
    pub fn evaluate(&mut self, root: ExprId, bindings: &[(ExprId, &Matrix)]) -> Result<Matrix> {
        for &(id, m) in bindings {
            if id.0 >= self.nodes.len() || self.nodes[id.0].op != Op::Input {
                return Err(Error::InvalidArgument(format!("node {} is not an input", id.0)));
            }
            if m.dim() != self.nodes[id.0].shape {
                return Err(shape_err!(
                    "input {} bound to {:?}, declared {:?}",
                    id.0,
                    m.dim(),
                    self.nodes[id.0].shape
                ));
            }
        }
        for i in 0..=root.0 {
            let value = match &self.nodes[i].op {
                Op::Constant => continue,
                Op::Input => bindings
                    .iter()
                    .find(|(id, _)| id.0 == i)
                    .map(|(_, m)| (*m).clone())
                    .ok_or(Error::UnboundInput(i))?,
                op => self.forward(op)?,
            };
            self.nodes[i].value = Some(value);
        }
        Ok(self.val(root).clone())
    }

    fn val(&self, id: ExprId) -> &Matrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parent evaluated before child")
    }

    fn forward(&self, op: &Op) -> Result<Matrix> {
        let out = match op {
            Op::Input | Op::Constant => unreachable!("handled by evaluate"),
            Op::MatMul(a, b) => self.val(*a).dot(self.val(*b)),
            Op::Add(a, b) => self.val(*a) + self.val(*b),
            Op::Hadamard(a, b) => self.val(*a) * self.val(*b),
            Op::Scale(a, s) => self.val(*a) * *s,
            Op::Relu(a) => self.val(*a).mapv(|v| v.max(0.0)),
            Op::Sigmoid(a) => self.val(*a).mapv(sigmoid),
            Op::Transpose(a) => self.val(*a).t().to_owned(),
            Op::RowConcat(a, b) => {
                ndarray::concatenate(ndarray::Axis(1), &[self.val(*a).view(), self.val(*b).view()])
                    .expect("row counts checked at record time")
            }
            Op::Sum(a) => Matrix::from_elem((1, 1), self.val(*a).sum()),
            Op::ColumnNorms(a) => {
                let norms = column_norms_of(self.val(*a));
                Matrix::from_shape_vec((1, norms.len()), norms).expect("one row")
            }
            Op::SoftmaxRows(a) => softmax_rows(self.val(*a)),
            Op::SoftmaxNll(a, targets) => Matrix::from_elem((1, 1), mean_nll(self.val(*a), targets)),
            Op::CosineColumnDistance(a, b) => {
                Matrix::from_elem((1, 1), cosine_column_distance(self.val(*a), self.val(*b)))
            }
            Op::NormalizeAdjacency(a) => {
                let (with_loops, scale) = loops_and_scale(self.val(*a))?;
                let n = with_loops.nrows();
                Matrix::from_shape_fn((n, n), |(i, j)| with_loops[[i, j]] * scale[i] * scale[j])
            }
        };
        Ok(out)
    }

    /// Reverse pass from a scalar `root`, seeded with `seed`.
    ///
    /// Every input gets a gradient; inputs the root does not depend on get zeros.
    pub fn backward(&self, root: ExprId, seed: f64) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(shape_err!("backward needs a scalar root, got {:?}", self.shape(root)));
        }
        if self.nodes[root.0].value.is_none() {
            return Err(Error::InvalidArgument("backward called before evaluate".into()));
        }
        let mut adjoint: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adjoint[root.0] = Some(Matrix::from_elem((1, 1), seed));

        for i in (0..=root.0).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if node.op == Op::Input {
                adjoint[i] = Some(g);
                continue;
            }
            for (parent, grad) in self.vjp(node, &g)? {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut adjoint[parent.0] {
                    Some(acc) => *acc += &grad,
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let mut grads = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op == Op::Input {
                let g = adjoint
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(node.shape));
                grads.by_input.insert(ExprId(i), g);
            }
        }
        Ok(grads)
    }

    fn wants(&self, id: ExprId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Vector-Jacobian products of one node with respect to its parents.
    fn vjp(&self, node: &Node, g: &Matrix) -> Result<Vec<(ExprId, Matrix)>> {
        let out = node.value.as_ref().expect("evaluated");
        let mut res = Vec::with_capacity(2);
        match &node.op {
            Op::Input | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.dot(&self.val(*b).t())));
                }
                if self.wants(*b) {
                    res.push((*b, self.val(*a).t().dot(g)));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Hadamard(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g * self.val(*b)));
                }
                if self.wants(*b) {
                    res.push((*b, g * self.val(*a)));
                }
            }
            Op::Scale(a, s) => res.push((*a, g * *s)),
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(self.val(*a), |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                res.push((*a, d));
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                d.zip_mut_with(out, |d, &y| *d *= y * (1.0 - y));
                res.push((*a, d));
            }
            Op::Transpose(a) => res.push((*a, g.t().to_owned())),
            Op::RowConcat(a, b) => {
                let split = self.shape(*a).1;
                res.push((*a, g.slice(ndarray::s![.., ..split]).to_owned()));
                res.push((*b, g.slice(ndarray::s![.., split..]).to_owned()));
            }
            Op::Sum(a) => res.push((*a, Matrix::from_elem(self.shape(*a), g[[0, 0]]))),
            Op::ColumnNorms(a) => {
                let factors = Matrix::from_shape_fn((1, out.ncols()), |(_, j)| {
                    let norm = out[[0, j]];
                    if norm > 0.0 {
                        g[[0, j]] / norm
                    } else {
                        0.0
                    }
                });
                res.push((*a, self.val(*a) * &factors));
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * out;
                for (mut row, y) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&y, |r, &y| *r -= y * dot);
                }
                res.push((*a, d));
            }
            Op::SoftmaxNll(a, targets) => {
                let mut d = softmax_rows(self.val(*a));
                let scale = g[[0, 0]] / targets.len() as f64;
                for (i, &t) in targets.iter().enumerate() {
                    d[[i, t]] -= 1.0;
                }
                d.mapv_inplace(|v| v * scale);
                res.push((*a, d));
            }
            Op::CosineColumnDistance(a, b) => {
                let want = (self.wants(*a), self.wants(*b));
                let (da, db) = cosine_column_distance_vjp(self.val(*a), self.val(*b), g[[0, 0]], want);
                res.extend(da.map(|d| (*a, d)));
                res.extend(db.map(|d| (*b, d)));
            }
            Op::NormalizeAdjacency(a) => {
                let (with_loops, s) = loops_and_scale(self.val(*a))?;
                let n = with_loops.nrows();
                // dL/dd_i = -1/2 s_i^3 (sum_l G_il B_il s_l + sum_k G_ki B_ki s_k)
                let mut d_degree = vec![0.0; n];
                for i in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += g[[i, l]] * with_loops[[i, l]] * s[l];
                        acc += g[[l, i]] * with_loops[[l, i]] * s[l];
                    }
                    d_degree[i] = -0.5 * s[i].powi(3) * acc;
                }
                let d = Matrix::from_shape_fn((n, n), |(i, j)| g[[i, j]] * s[i] * s[j] + d_degree[i]);
                res.push((*a, d));
            }
        }
        Ok(res)
    }
}

fn parents(op: &Op) -> Vec<ExprId> {
    match op {
        Op::Input | Op::Constant => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Hadamard(a, b)
        | Op::RowConcat(a, b)
        | Op::CosineColumnDistance(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Transpose(a)
        | Op::Sum(a)
        | Op::ColumnNorms(a)
        | Op::SoftmaxRows(a)
        | Op::SoftmaxNll(a, _)
        | Op::NormalizeAdjacency(a) => vec![*a],
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn column_norms_of(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; m.ncols()];
    for row in m.rows() {
        for (s, &x) in acc.iter_mut().zip(row) {
            *s += x * x;
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

/// Column norms of `a` and `b` and column dot products, in one sequential sweep over the
/// rows. Each column is summed in row order.
fn column_stats(a: &Matrix, b: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cols = a.ncols();
    let (mut aa, mut bb, mut ab) = (vec![0.0; cols], vec![0.0; cols], vec![0.0; cols]);
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        let (ra, rb) = (row_slice(ra), row_slice(rb));
        for ((((x, y), saa), sbb), sab) in ra.iter().zip(rb.iter()).zip(&mut aa).zip(&mut bb).zip(&mut ab) {
            *saa += x * x;
            *sbb += y * y;
            *sab += x * y;
        }
    }
    let sqrt = |v: Vec<f64>| v.into_iter().map(f64::sqrt).collect();
    (sqrt(aa), sqrt(bb), ab)
}

fn row_slice(row: ndarray::ArrayView1<'_, f64>) -> std::borrow::Cow<'_, [f64]> {
    match row.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(row.to_vec()),
    }
}

fn mean_nll(logits: &Matrix, targets: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[t]
        })
        .sum();
    total / targets.len() as f64
}

fn loops_and_scale(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let n = a.nrows();
    let with_loops = a + &Matrix::eye(n);
    let mut scale = Vec::with_capacity(n);
    for row in with_loops.rows() {
        let degree = row.sum();
        if !(degree > 0.0 && degree.is_finite()) {
            return Err(Error::NonFinite(format!(
                "adjacency degree {degree} cannot be normalized"
            )));
        }
        scale.push(1.0 / degree.sqrt());
    }
    Ok((with_loops, scale))
}

/// Per-layer matching distance `sum_i (1 - cos(a_i, b_i))` over columns, evaluated as
/// `|a_i/|a_i| - b_i/|b_i||^2 / 2` so identical columns give exactly 0 and no term is negative.
///
/// A column pair contributes 0 when both norms are below [`ZERO_NORM`] and 1 when exactly
/// one is.
pub fn cosine_column_distance(a: &Matrix, b: &Matrix) -> f64 {
    let (na, nb) = (column_norms_of(a), column_norms_of(b));
    let live: Vec<bool> = na.iter().zip(&nb).map(|(&x, &y)| x >= ZERO_NORM && y >= ZERO_NORM).collect();
    let inv = |n: &[f64]| -> Vec<f64> { n.iter().zip(&live).map(|(&v, &l)| if l { 1.0 / v } else { 0.0 }).collect() };
    let (ia, ib) = (inv(&na), inv(&nb));
    let mut sq = vec![0.0; a.ncols()];
    for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
        let (ra, rb) = (row_slice(ra), row_slice(rb));
        for ((((x, y), s), pa), pb) in ra.iter().zip(rb.iter()).zip(&mut sq).zip(&ia).zip(&ib) {
            let d = x * pa - y * pb;
            *s += d * d;
        }
    }
    na.iter()
        .zip(&nb)
        .zip(&sq)
        .map(|((&na, &nb), &s)| match (na < ZERO_NORM, nb < ZERO_NORM) {
            (true, true) => 0.0,
            (true, false) | (false, true) => 1.0,
            (false, false) => 0.5 * s,
        })
        .sum()
}

/// Gradients of `g * cosine_column_distance(a, b)`; columns hit by the zero-norm guard get
/// zero gradient. Only the requested sides are materialized.
fn cosine_column_distance_vjp(a: &Matrix, b: &Matrix, g: f64, want: (bool, bool)) -> (Option<Matrix>, Option<Matrix>) {
    let (na, nb, dot) = column_stats(a, b);
    // da_ij = u_j b_ij + v_j a_ij and db_ij = u_j a_ij + w_j b_ij
    let cols = a.ncols();
    let (mut u, mut v, mut w) = (vec![0.0; cols], vec![0.0; cols], vec![0.0; cols]);
    for j in 0..cols {
        if na[j] < ZERO_NORM || nb[j] < ZERO_NORM {
            continue;
        }
        let cos = dot[j] / (na[j] * nb[j]);
        u[j] = -g / (na[j] * nb[j]);
        v[j] = g * cos / (na[j] * na[j]);
        w[j] = g * cos / (nb[j] * nb[j]);
    }
    let combine = |first: &Matrix, second: &Matrix, fc: &[f64], sc: &[f64]| {
        let mut out = Vec::with_capacity(first.len());
        for (rf, rs) in first.rows().into_iter().zip(second.rows()) {
            let (rf, rs) = (row_slice(rf), row_slice(rs));
            out.extend(rf.iter().zip(rs.iter()).zip(fc.iter().zip(sc)).map(|((f, s), (a, b))| a * f + b * s));
        }
        Matrix::from_shape_vec(first.dim(), out).expect("one entry per element")
    };
    let da = want.0.then(|| combine(b, a, &u, &v));
    let db = want.1.then(|| combine(a, b, &u, &w));
    (da, db)
}

/// Largest elementwise relative error between the reverse-mode gradient of `root` with
/// respect to `input` and central differences with step `h`.
///
/// The relative error of one entry is `|a - b| / max(|a|, |b|, 1e-8)`. The tape is left
/// evaluated at the original bindings.
pub fn finite_diff_check(
    tape: &mut Tape,
    root: ExprId,
    bindings: &[(ExprId, &Matrix)],
    input: ExprId,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    tape.evaluate(root, bindings)?;
    let analytic = tape
        .backward(root, 1.0)?
        .take(input)
        .ok_or_else(|| Error::InvalidArgument(format!("node {} is not an input", input.0)))?;
    let base = bindings
        .iter()
        .find(|(id, _)| *id == input)
        .map(|(_, m)| (*m).clone())
        .ok_or(Error::UnboundInput(input.0))?;

    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for idx in 0..base.len() {
        let (r, c) = (idx / base.ncols(), idx % base.ncols());
        let mut eval_at = |value: f64, tape: &mut Tape| -> Result<f64> {
            probe[[r, c]] = value;
            let rebound: Vec<(ExprId, &Matrix)> = bindings
                .iter()
                .map(|&(id, m)| if id == input { (id, &probe) } else { (id, m) })
                .collect();
            Ok(tape.evaluate(root, &rebound)?[[0, 0]])
        };
        let plus = eval_at(base[[r, c]] + h, tape)?;
        let minus = eval_at(base[[r, c]] - h, tape)?;
        probe[[r, c]] = base[[r, c]];
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[[r, c]];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    tape.evaluate(root, bindings)?;
    Ok(worst)
}
