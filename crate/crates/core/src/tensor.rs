//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are registered
//! with [`Tape::param`] (differentiable) or [`Tape::constant`]; every
//! operation appends a node whose value is computed eagerly. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the accumulated [`Gradients`].
//!
//! Tensors are at most two-dimensional. A one-dimensional tensor of length
//! `n` behaves as a `1 × n` row wherever a row-wise operation applies.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::Config(format!(
                "tensors are limited to two dimensions, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut t = Self::zeros(&[len]);
        t.data[index] = 1.0;
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (vectors and scalars are one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Index of the largest entry in each row; the first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows()).map(|r| argmax(self.row(r))).collect()
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Sum in ascending order so the result does not depend on input order.
fn order_free_sum(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
    }
    let mut scratch = out.to_vec();
    let total = order_free_sum(&mut scratch);
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let lse = max + order_free_sum(&mut exps).ln();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Row-wise softmax of a plain tensor (no tape).
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for r in 0..x.rows() {
        softmax_row(x.row(r), &mut out.data[r * c..(r + 1) * c]);
    }
    out
}

/// Graph readout over contiguous row segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Sum,
    Max,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
            Pooling::Max => "max",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Pool {
        x: Var,
        segments: Vec<usize>,
        kind: Pooling,
        // row chosen per (segment, column) for max pooling
        winners: Vec<usize>,
    },
    Propagate {
        x: Var,
        blocks: Vec<Tensor>,
    },
    GroupDot {
        items: Var,
        queries: Var,
        group: usize,
    },
    StraightThrough(Var),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.cols() != bv.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let data = matmul_raw(&av.data, &bv.data, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
            needs,
        ))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.same_shape(bv, "elementwise")?;
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape.clone();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data }, Op::Binary(op, a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        if op == Unary::Log {
            if let Some(bad) = av.data.iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive entry {bad}"),
                });
            }
        }
        let f: fn(f64) -> f64 = match op {
            Unary::Relu => |x| x.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| f(x)).collect(),
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::Unary(op, a), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a).expect("relu is total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("tanh is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| x * factor).collect(),
        };
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, factor), needs)
    }

    /// Softmax along the last axis (per row).
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = av.clone();
        let c = av.cols();
        for r in 0..av.rows() {
            log_softmax_row(av.row(r), &mut value.data[r * c..(r + 1) * c]);
        }
        let needs = self.needs(a);
        self.push(value, Op::LogSoftmax(a), needs)
    }

    /// Mean over all rows of an `n × d` matrix, giving a length-`d` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        let pooled = self.pool_rows(a, &[n], Pooling::Mean)?;
        let d = self.value(pooled).cols();
        self.nodes[pooled.0].value.shape = vec![d];
        Ok(pooled)
    }

    /// Pools consecutive row segments of `a` into one row each.
    pub fn pool_rows(&mut self, a: Var, segments: &[usize], kind: Pooling) -> Result<Var> {
        let av = self.value(a);
        let total: usize = segments.iter().sum();
        if total != av.rows() {
            return Err(Error::Shape {
                op: "pool_rows",
                left: av.shape.clone(),
                right: vec![total],
            });
        }
        if segments.is_empty() || segments.contains(&0) {
            return Err(Error::EmptyGraph);
        }
        let d = av.cols();
        let mut data = vec![0.0; segments.len() * d];
        let mut winners = Vec::new();
        let mut start = 0;
        for (s, &len) in segments.iter().enumerate() {
            let out = &mut data[s * d..(s + 1) * d];
            match kind {
                Pooling::Mean | Pooling::Sum => {
                    for r in start..start + len {
                        for (o, &v) in out.iter_mut().zip(av.row(r)) {
                            *o += v;
                        }
                    }
                    if kind == Pooling::Mean {
                        let inv = 1.0 / len as f64;
                        out.iter_mut().for_each(|o| *o *= inv);
                    }
                }
                Pooling::Max => {
                    for (j, o) in out.iter_mut().enumerate() {
                        let mut best = start;
                        for r in start + 1..start + len {
                            if av.at(r, j) > av.at(best, j) {
                                best = r;
                            }
                        }
                        *o = av.at(best, j);
                        winners.push(best);
                    }
                }
            }
            start += len;
        }
        let value = Tensor {
            shape: vec![segments.len(), d],
            data,
        };
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::Pool {
                x: a,
                segments: segments.to_vec(),
                kind,
                winners,
            },
            needs,
        ))
    }

    /// Multiplies each square block of `blocks` into the matching row segment
    /// of `x`: a block-diagonal product without materialising the full matrix.
    pub fn propagate(&mut self, blocks: Vec<Tensor>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let total: usize = blocks.iter().map(Tensor::rows).sum();
        if total != xv.rows() || blocks.iter().any(|b| b.rows() != b.cols()) {
            return Err(Error::Shape {
                op: "propagate",
                left: vec![total],
                right: xv.shape.clone(),
            });
        }
        let d = xv.cols();
        let mut data = Vec::with_capacity(xv.len());
        let mut start = 0;
        for b in &blocks {
            let n = b.rows();
            let seg = &xv.data[start * d..(start + n) * d];
            data.extend(matmul_raw(&b.data, seg, n, n, d));
            start += n;
        }
        let value = Tensor {
            shape: vec![xv.rows(), d],
            data,
        };
        let needs = self.needs(x);
        Ok(self.push(value, Op::Propagate { x, blocks }, needs))
    }

    /// Scores `items` (`b·group × d`) against `queries` (`b × d`): row `i`,
    /// column `j` of the `b × group` result is `items[i·group + j] · queries[i]`.
    pub fn group_dot(&mut self, items: Var, queries: Var, group: usize) -> Result<Var> {
        let (iv, qv) = (self.value(items), self.value(queries));
        if group == 0 || iv.cols() != qv.cols() || iv.rows() != qv.rows() * group {
            return Err(Error::Shape {
                op: "group_dot",
                left: iv.shape.clone(),
                right: qv.shape.clone(),
            });
        }
        let b = qv.rows();
        let mut data = Vec::with_capacity(b * group);
        for i in 0..b {
            let q = qv.row(i);
            for j in 0..group {
                data.push(iv.row(i * group + j).iter().zip(q).map(|(x, y)| x * y).sum());
            }
        }
        let value = Tensor {
            shape: vec![b, group],
            data,
        };
        let needs = self.needs(items) || self.needs(queries);
        Ok(self.push(
            value,
            Op::GroupDot {
                items,
                queries,
                group,
            },
            needs,
        ))
    }

    /// Forward value is the one-hot argmax of each row of `soft`; the backward
    /// pass hands the upstream gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let sv = self.value(soft);
        let mut value = Tensor::zeros(&sv.shape);
        let c = sv.cols();
        for (r, idx) in sv.argmax_rows().into_iter().enumerate() {
            value.data[r * c + idx] = 1.0;
        }
        let needs = self.needs(soft);
        self.push(value, Op::StraightThrough(soft), needs)
    }

    /// Selects one column per row, giving a column of length `rows`.
    pub fn pick(&mut self, a: Var, columns: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if columns.len() != av.rows() || columns.iter().any(|&c| c >= av.cols()) {
            return Err(Error::Shape {
                op: "pick",
                left: av.shape.clone(),
                right: vec![columns.len()],
            });
        }
        let data = columns
            .iter()
            .enumerate()
            .map(|(r, &c)| av.at(r, c))
            .collect();
        let value = Tensor {
            shape: vec![columns.len()],
            data,
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::Pick(a, columns.to_vec()), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Tensor::scalar(av.data.iter().sum::<f64>() / av.len() as f64);
        let needs = self.needs(a);
        self.push(value, Op::Mean(a), needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor {
            shape: lv.shape.clone(),
            data: vec![1.0],
        });
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate_node(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        // only differentiable leaves keep their gradients
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !(node.needs_grad && matches!(node.op, Op::Leaf)) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.data.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            slot => {
                *slot = Some(Tensor {
                    shape: self.nodes[var.0].value.shape.clone(),
                    data: delta,
                })
            }
        }
    }

    fn propagate_node(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = &up.data;
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bt = bv.transpose();
                    self.accumulate(grads, *a, matmul_raw(g, &bt.data, m, n, k));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let at = av.transpose();
                    self.accumulate(grads, *b, matmul_raw(&at.data, g, k, m, n));
                }
            }
            Op::Binary(op, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (da, db): (Vec<f64>, Vec<f64>) = match op {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.iter().map(|x| -x).collect()),
                    Binary::Mul => (
                        g.iter().zip(&bv.data).map(|(x, y)| x * y).collect(),
                        g.iter().zip(&av.data).map(|(x, y)| x * y).collect(),
                    ),
                };
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Unary(op, a) => {
                let av = self.value(*a);
                let d: Vec<f64> = match op {
                    Unary::Relu => g
                        .iter()
                        .zip(&av.data)
                        .map(|(u, &x)| if x > 0.0 { *u } else { 0.0 })
                        .collect(),
                    Unary::Tanh => g
                        .iter()
                        .zip(&out.data)
                        .map(|(u, y)| u * (1.0 - y * y))
                        .collect(),
                    Unary::Exp => g.iter().zip(&out.data).map(|(u, y)| u * y).collect(),
                    Unary::Log => g.iter().zip(&av.data).map(|(u, x)| u / x).collect(),
                };
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.iter().map(|u| u * f).collect()),
            Op::Softmax(a) => {
                let c = out.cols();
                let mut d = vec![0.0; g.len()];
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let u = &g[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(u).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = y[j] * (u[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let c = out.cols();
                let mut d = vec![0.0; g.len()];
                for r in 0..out.rows() {
                    let ls = out.row(r);
                    let u = &g[r * c..(r + 1) * c];
                    let total: f64 = u.iter().sum();
                    for j in 0..c {
                        d[r * c + j] = u[j] - ls[j].exp() * total;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Pool {
                x,
                segments,
                kind,
                winners,
            } => {
                let xv = self.value(*x);
                let dcols = xv.cols();
                let mut d = vec![0.0; xv.len()];
                let mut start = 0;
                for (s, &len) in segments.iter().enumerate() {
                    let u = &g[s * dcols..(s + 1) * dcols];
                    match kind {
                        Pooling::Mean | Pooling::Sum => {
                            let w = if *kind == Pooling::Mean {
                                1.0 / len as f64
                            } else {
                                1.0
                            };
                            for r in start..start + len {
                                for j in 0..dcols {
                                    d[r * dcols + j] += u[j] * w;
                                }
                            }
                        }
                        Pooling::Max => {
                            for j in 0..dcols {
                                let r = winners[s * dcols + j];
                                d[r * dcols + j] += u[j];
                            }
                        }
                    }
                    start += len;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Propagate { x, blocks } => {
                let dcols = out.cols();
                let mut d = Vec::with_capacity(g.len());
                let mut start = 0;
                for b in blocks {
                    let n = b.rows();
                    let bt = b.transpose();
                    d.extend(matmul_raw(
                        &bt.data,
                        &g[start * dcols..(start + n) * dcols],
                        n,
                        n,
                        dcols,
                    ));
                    start += n;
                }
                self.accumulate(grads, *x, d);
            }
            Op::GroupDot {
                items,
                queries,
                group,
            } => {
                let (iv, qv) = (self.value(*items), self.value(*queries));
                let dcols = iv.cols();
                let mut di = vec![0.0; iv.len()];
                let mut dq = vec![0.0; qv.len()];
                for i in 0..qv.rows() {
                    let q = qv.row(i);
                    for j in 0..*group {
                        let u = g[i * group + j];
                        let row = i * group + j;
                        for c in 0..dcols {
                            di[row * dcols + c] += u * q[c];
                            dq[i * dcols + c] += u * iv.at(row, c);
                        }
                    }
                }
                self.accumulate(grads, *items, di);
                self.accumulate(grads, *queries, dq);
            }
            Op::StraightThrough(soft) => self.accumulate(grads, *soft, g.clone()),
            Op::Pick(a, columns) => {
                let av = self.value(*a);
                let mut d = vec![0.0; av.len()];
                for (r, &c) in columns.iter().enumerate() {
                    d[r * av.cols() + c] += g[r];
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn shape_product_is_checked() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2, 2], vec![1.0; 8]).is_err());
    }

    #[test]
    fn matmul_identity_and_selector() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let x = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), &m(&[&[1.0, 2.0], &[3.0, 4.0]]));

        let s = tape.constant(m(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let b = tape.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let y = tape.matmul(s, b).unwrap();
        assert_eq!(tape.value(y), &m(&[&[5.0, 6.0], &[0.0, 0.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut tape = Tape::new();
        let a = tape.param(m(&[&[1.0, 2.0]]));
        let b = tape.constant(m(&[&[3.0], &[4.0]]));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum(c);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_and_tanh() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let z = tape.param(Tensor::scalar(0.0));
        let t = tape.tanh(z);
        assert_eq!(tape.value(t).data(), &[0.0]);
        let g = tape.backward(t).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[1.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]));
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_nan_propagates() {
        let s = softmax(&Tensor::vector(vec![f64::NAN, 0.0]));
        assert!(!s.is_finite());
    }

    #[test]
    fn softmax_is_exactly_permutation_equivariant() {
        let x = [0.3, -1.7, 2.2, 0.1, 5.0e-3];
        let y = softmax(&Tensor::vector(x.to_vec()));
        let perm = [4, 2, 0, 3, 1];
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let yp = softmax(&Tensor::vector(xp));
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(yp.data()[k].to_bits(), y.data()[i].to_bits());
        }
    }

    #[test]
    fn mean_rows_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.param(m(&[&[1.0, 3.0], &[3.0, 5.0]]));
        let y = tape.mean_rows(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2]);
        assert_eq!(tape.value(y).data(), &[2.0, 4.0]);
        let w = tape.constant(Tensor::vector(vec![1.0, 10.0]));
        let p = tape.mul(y, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5, 5.0, 0.5, 5.0]);

        let mut tape = Tape::new();
        let x = tape.constant(m(&[&[7.0, 7.0]]));
        let y = tape.mean_rows(x).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 7.0]);
    }

    #[test]
    fn mean_rows_of_empty_matrix_fails() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[0, 3]));
        assert!(matches!(tape.mean_rows(x), Err(Error::EmptyGraph)));
    }

    #[test]
    fn backward_scalar_cases() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.5));
        let g = tape.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let a = tape.scale(x, 2.0);
        let b = tape.add(a, x).unwrap();
        let g = tape.backward(b).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn straight_through_forward_is_one_hot() {
        let mut tape = Tape::new();
        let s = tape.param(m(&[&[0.2, 0.5, 0.3], &[0.6, 0.2, 0.2]]));
        let h = tape.straight_through(s);
        assert_eq!(tape.value(h).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let mut tape = Tape::new();
        let x = tape.param(m(&[&[1.0, 5.0], &[4.0, 2.0]]));
        let p = tape.pool_rows(x, &[2], Pooling::Max).unwrap();
        assert_eq!(tape.value(p).data(), &[4.0, 5.0]);
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
