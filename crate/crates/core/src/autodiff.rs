//! Tape-based reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Because
//! parents are always recorded before children, the tape order is a valid
//! topological order and [`Graph::backward`] simply walks it in reverse.
//!
//! Only the operations needed by the impact models are provided. There is no
//! general broadcasting: binary operations require identical shapes, with the
//! single exception of [`Graph::add_bias`] (row-wise bias vector).
//!
//! Gradients accumulate across repeated [`Graph::backward`] calls until
//! [`Graph::zero_grad`] is called.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds an `[n × d]` matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptySequence("from_rows"));
        }
        let d = rows[0].len();
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![d],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![n, d], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows and columns of a matrix; vectors are treated as a single row.
    fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.numel()),
        }
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn transposed(&self) -> Tensor {
        let (r, c) = self.dims2();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data,
        }
    }
}

/// Plain matrix product of `[m × k]` and `[k × n]` buffers.
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

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    SliceCols(NodeId, usize),
    Mask(NodeId, Tensor),
    WeightedMean(NodeId, NodeId),
    Mse(NodeId, Vec<f64>),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// A computation graph (tape). One graph per forward pass; graphs share no state.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant input. Constants receive gradients but are not
    /// reported by [`Graph::param_gradients`].
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Records a named learnable parameter.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("parameter {name} registered twice")));
        }
        let id = self.push(value, Op::Param);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, or `None` if no backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    /// Gradient for every registered parameter, zero where unreached.
    pub fn param_gradients(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &id)| {
                let node = &self.nodes[id.0];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[0] {
            return Err(Error::Dimension {
                op: "matmul",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let data = matmul_raw(&av.data, &bv.data, m, k, n);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                left: av.shape.clone(),
                right: vec![],
            });
        }
        let t = av.transposed();
        Ok(self.push(t, Op::Transpose(a)))
    }

    fn check_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Dimension {
                op,
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a bias vector of shape `[n]` to every row of an `[m × n]` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (m, n) = av.dims2();
        if av.shape.len() != 2 || bv.shape != [n] {
            return Err(Error::Dimension {
                op: "add_bias",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let mut data = av.data.clone();
        for i in 0..m {
            for (x, b) in data[i * n..(i + 1) * n].iter_mut().zip(&bv.data) {
                *x += b;
            }
        }
        let shape = av.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddBias(a, bias)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape.len() != 2 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                left: av.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = av.dims2();
        let mut data = av.data.clone();
        for row in data.chunks_mut(n).take(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let shape = av.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::SoftmaxRows(a)))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::EmptySequence("concat_cols"))?;
        let rows = self.value(first).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.shape.len() != 2 || v.shape[0] != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(first).shape.clone(),
                    right: v.shape.clone(),
                });
            }
            widths.push(v.shape[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Stacks `[1 × n]` rows into an `[m × n]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows.first().ok_or(Error::EmptySequence("stack_rows"))?;
        let shape = self.value(first).shape.clone();
        if shape.len() != 2 || shape[0] != 1 {
            return Err(Error::Dimension {
                op: "stack_rows",
                left: shape,
                right: vec![1],
            });
        }
        let n = shape[1];
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let v = self.value(r);
            if v.shape != shape {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    left: shape,
                    right: v.shape.clone(),
                });
            }
            data.extend_from_slice(&v.data);
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), n],
                data,
            },
            Op::StackRows(rows.to_vec()),
        ))
    }

    /// Selects row `index` of a matrix as a `[1 × n]` matrix.
    pub fn row(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if av.shape.len() != 2 || index >= m {
            return Err(Error::contract(format!(
                "row {index} out of range for shape {:?}",
                av.shape
            )));
        }
        let data = av.data[index * n..(index + 1) * n].to_vec();
        Ok(self.push(
            Tensor {
                shape: vec![1, n],
                data,
            },
            Op::Row(a, index),
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        let (m, n) = av.dims2();
        if av.shape.len() != 2 || len == 0 || start + len > n {
            return Err(Error::contract(format!(
                "column slice {start}..{} out of range for shape {:?}",
                start + len,
                av.shape
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.data[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![m, len],
                data,
            },
            Op::SliceCols(a, start),
        ))
    }

    /// Multiplies by a fixed mask (used for inverted dropout).
    pub fn mask(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId> {
        let av = self.value(a);
        if !av.same_shape(&mask) {
            return Err(Error::Dimension {
                op: "mask",
                left: av.shape.clone(),
                right: mask.shape.clone(),
            });
        }
        let v = av.zip_map(&mask, |x, m| x * m);
        Ok(self.push(v, Op::Mask(a, mask)))
    }

    /// `Σ rᵢwᵢ / Σ wᵢ` as a scalar. Weights must be strictly positive.
    pub fn weighted_mean(&mut self, ratings: NodeId, weights: NodeId) -> Result<NodeId> {
        let (rv, wv) = (self.value(ratings), self.value(weights));
        if rv.numel() == 0 {
            return Err(Error::EmptySequence("weighted_mean"));
        }
        if rv.shape != wv.shape {
            return Err(Error::Dimension {
                op: "weighted_mean",
                left: rv.shape.clone(),
                right: wv.shape.clone(),
            });
        }
        let q = weighted_mean_raw(&rv.data, &wv.data);
        Ok(self.push(Tensor::scalar(q), Op::WeightedMean(ratings, weights)))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, predicted: NodeId, target: &[f64]) -> Result<NodeId> {
        let pv = self.value(predicted);
        if pv.numel() != target.len() {
            return Err(Error::Dimension {
                op: "mse",
                left: pv.shape.clone(),
                right: vec![target.len()],
            });
        }
        let loss = mse_raw(&pv.data, target)?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(predicted, target.to_vec())))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data.iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Back-propagates from a scalar `loss`, adding into every node's gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = local[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut local);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut send = |id: NodeId, contrib: Tensor| match &mut local[id.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                let bt = bv.transposed();
                let ga = matmul_raw(&g.data, &bt.data, m, n, k);
                let at = av.transposed();
                let gb = matmul_raw(&at.data, &g.data, k, m, n);
                send(*a, Tensor { shape: av.shape.clone(), data: ga });
                send(*b, Tensor { shape: bv.shape.clone(), data: gb });
            }
            Op::Transpose(a) => send(*a, g.transposed()),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddBias(a, b) => {
                let (m, n) = g.dims2();
                let mut gb = vec![0.0; n];
                for i in 0..m {
                    for (acc, v) in gb.iter_mut().zip(&g.data[i * n..(i + 1) * n]) {
                        *acc += v;
                    }
                }
                send(*a, g.clone());
                send(*b, Tensor { shape: vec![n], data: gb });
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, g.zip_map(bv, |gv, x| gv * x));
                send(*b, g.zip_map(av, |gv, x| gv * x));
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => send(*a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::SoftmaxRows(a) => {
                let (m, n) = y.dims2();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let ys = &y.data[i * n..(i + 1) * n];
                    let gs = &g.data[i * n..(i + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ga[i * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                send(*a, Tensor { shape: y.shape.clone(), data: ga });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape[1];
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&g.data[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    send(p, Tensor { shape: vec![m, w], data: gp });
                }
            }
            Op::StackRows(rows) => {
                let n = g.dims2().1;
                for (i, &r) in rows.iter().enumerate() {
                    let gr = g.data[i * n..(i + 1) * n].to_vec();
                    send(r, Tensor { shape: vec![1, n], data: gr });
                }
            }
            Op::Row(a, index) => {
                let av = self.value(*a);
                let n = av.dims2().1;
                let mut ga = Tensor::zeros(&av.shape);
                ga.data[index * n..(index + 1) * n].copy_from_slice(&g.data);
                send(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (m, n) = av.dims2();
                let len = g.dims2().1;
                let mut ga = Tensor::zeros(&av.shape);
                for i in 0..m {
                    ga.data[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data[i * len..(i + 1) * len]);
                }
                send(*a, ga);
            }
            Op::Mask(a, mask) => send(*a, g.zip_map(mask, |gv, m| gv * m)),
            Op::WeightedMean(r, w) => {
                let (rv, wv) = (self.value(*r), self.value(*w));
                let total: f64 = wv.data.iter().sum();
                let q = y.data[0];
                let gs = g.data[0];
                send(*r, wv.map(|wi| gs * wi / total));
                send(*w, rv.map(|ri| gs * (ri - q) / total));
            }
            Op::Mse(p, target) => {
                let pv = self.value(*p);
                let n = target.len() as f64;
                let gs = g.data[0];
                let data = pv
                    .data
                    .iter()
                    .zip(target)
                    .map(|(pi, ti)| gs * 2.0 * (pi - ti) / n)
                    .collect();
                send(*p, Tensor { shape: pv.shape.clone(), data });
            }
            Op::Sum(a) => {
                let shape = &self.value(*a).shape;
                send(*a, Tensor::filled(shape, g.data[0]));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                send(*a, Tensor::filled(&av.shape, g.data[0] / av.numel() as f64));
            }
        }
    }
}

/// `Σ rᵢwᵢ / Σ wᵢ` on plain slices.
pub fn weighted_mean_raw(ratings: &[f64], weights: &[f64]) -> f64 {
    let (num, den) = ratings
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (r, w)| (n + r * w, d + w));
    num / den
}

/// Mean of squared differences on plain slices.
pub fn mse_raw(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::contract(format!(
            "mse length mismatch: {} predictions vs {} targets",
            predicted.len(),
            target.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptySequence("mse"));
    }
    let total: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(total / predicted.len() as f64)
}
