//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value and enough
//! context to run its vector-Jacobian product. `backward` walks the list in
//! reverse, which is a valid reverse topological order because nodes can only
//! reference earlier nodes.

use super::tensor::Tensor;
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Softmax { x: Var, len: usize, inner: usize },
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Glu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MeanAxis { x: Var, len: usize, inner: usize },
    Sum(Var),
    WeightedSum { x: Var, weights: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    RepeatRows(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
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

/// Splits `shape` around `axis` into (outer, len, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_with(value, op, needs_grad)
    }

    fn push_with(&mut self, mut value: Tensor, op: Op, needs_grad: bool) -> Var {
        value.grad = None;
        value.requires_grad = needs_grad;
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf; it receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push_with(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = true;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; `None` for nodes
    /// that do not depend on any trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Copy of the value with the gradient slot filled in.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor {
        let mut t = self.value(v).clone();
        t.grad = self.grad(v).map(<[f64]>::to_vec);
        t
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(dim_err!("{what} expects a matrix, got shape {s:?}")),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim_err!("matmul: inner dimensions of {:?} and {:?} disagree", [m, k], [k2, n]));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], data)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let value = Tensor::new(&[c, r], transpose_raw(self.value(a).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// `a + b` with `b` broadcast along every last-axis vector of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(b).numel() != cols {
            return Err(dim_err!("add_row: bias {:?} does not match last axis of {:?}", self.shape(b), self.shape(a)));
        }
        let bias = self.value(b).data();
        let data = self.value(a).data().chunks(cols).flat_map(|r| r.iter().zip(bias).map(|(x, y)| x + y)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::AddRow(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Scale(a, c), &[a]))
    }

    /// Adds a constant (non-differentiable) tensor, e.g. an additive mask.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(dim_err!("add_const: shapes {:?} and {:?} differ", self.shape(a), c.shape()));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::AddConst(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Sigmoid(a), &[a]))
    }

    /// Softmax along `axis`, stabilized by subtracting each slice's maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(a), axis)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, Op::Softmax { x: a, len, inner }, &[a]))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        let mut out = Vec::with_capacity(self.value(a).numel());
        for row in self.value(a).data().chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, Op::LogSoftmax(a), &[a]))
    }

    /// Per-vector standardization over the last axis followed by `gain * x + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(dim_err!(
                "layer_norm: gain {:?} / bias {:?} must match last axis of {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            ));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(self.value(x).numel());
        let mut rstd = Vec::new();
        let mut out = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Gated linear unit: splits the last axis into halves `(a, b)` and returns `a * sigmoid(b)`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if !cols.is_multiple_of(2) {
            return Err(dim_err!("glu: last dimension of {:?} is odd", self.shape(a)));
        }
        let half = cols / 2;
        let out = self
            .value(a)
            .data()
            .chunks(cols)
            .flat_map(|r| (0..half).map(move |j| r[j] * sigmoid(r[half + j])))
            .collect();
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = half;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Glu(a), &[a]))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        for p in parts {
            let s = self.shape(*p);
            if &s[..s.len() - 1] != lead {
                return Err(dim_err!("concat: {:?} and {:?} disagree off the last axis", self.shape(first), s));
            }
        }
        let rows = self.value(first).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let cols = self.value(a).cols();
        if len == 0 || start + len > cols {
            return Err(dim_err!("slice {start}..{} out of range for {:?}", start + len, self.shape(a)));
        }
        let out = self.value(a).data().chunks(cols).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Slice { x: a, start }, &[a]))
    }

    /// Mean over `axis`, which is removed (a 1-D input yields shape `[1]`).
    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(a), axis)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape: Vec<usize> = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MeanAxis { x: a, len, inner }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), &[a]))
    }

    /// Scalar `sum(weights * a)` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        if weights.len() != self.value(a).numel() {
            return Err(dim_err!("weighted_sum: {} weights for shape {:?}", weights.len(), self.shape(a)));
        }
        let s = self.value(a).data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x: a, weights }, &[a]))
    }

    /// Gathers rows of a `[vocab, d]` table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix_dims(table, "embedding_lookup")?;
        if ids.is_empty() {
            return Err(dim_err!("embedding_lookup with no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(dim_err!("embedding id {bad} out of range for table {:?}", [vocab, d]));
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
        let value = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Inverted dropout with a caller-supplied keep mask (entries are 0 or `1/(1-p)`).
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(dim_err!("dropout mask of {} for shape {:?}", mask.len(), self.shape(a)));
        }
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Dropout { x: a, mask }, &[a]))
    }

    /// Stacks a single vector `rows` times into a `[rows, d]` matrix.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let d = self.value(a).numel();
        if rows == 0 {
            return Err(dim_err!("repeat_rows with zero rows"));
        }
        let data = self.value(a).data().repeat(rows);
        let value = Tensor::new(&[rows, d], data)?;
        Ok(self.push(value, Op::RepeatRows(a), &[a]))
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from a scalar loss. Gradients of every trainable leaf
    /// reachable from `loss` are available through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut acc = |v: Var, g: &dyn Fn(usize) -> f64| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s += g(k);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.nodes[a.0].needs_grad {
                    let bt = transpose_raw(bv, k, n);
                    let da = matmul_raw(dy, &bt, m, n, k);
                    acc(*a, &|j| da[j]);
                }
                if self.nodes[b.0].needs_grad {
                    let at = transpose_raw(av, m, k);
                    let db = matmul_raw(&at, dy, k, m, n);
                    acc(*b, &|j| db[j]);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let dx = transpose_raw(dy, c, r);
                acc(*a, &|j| dx[j]);
            }
            Op::Add(a, b) => {
                acc(*a, &|j| dy[j]);
                acc(*b, &|j| dy[j]);
            }
            Op::AddRow(a, b) => {
                acc(*a, &|j| dy[j]);
                let cols = self.value(*b).numel();
                let mut db = vec![0.0; cols];
                for (j, g) in dy.iter().enumerate() {
                    db[j % cols] += g;
                }
                acc(*b, &|j| db[j]);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &|j| dy[j] * bv[j]);
                acc(*b, &|j| dy[j] * av[j]);
            }
            Op::Scale(a, c) => acc(*a, &|j| dy[j] * c),
            Op::AddConst(a) => acc(*a, &|j| dy[j]),
            Op::Sigmoid(a) => acc(*a, &|j| dy[j] * y[j] * (1.0 - y[j])),
            Op::Softmax { x, len, inner } => {
                let (len, inner) = (*len, *inner);
                let outer = y.len() / (len * inner);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| dy[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (dy[idx(j)] - dot);
                        }
                    }
                }
                acc(*x, &|j| dx[j]);
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let total: f64 = dyr.iter().sum();
                    for j in 0..cols {
                        dxr[j] = dyr[j] - yr[j].exp() * total;
                    }
                }
                acc(*a, &|j| dx[j]);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let cols = node.value.cols();
                let g = self.value(*gain).data();
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                let mut dx = vec![0.0; y.len()];
                for r in 0..rstd.len() {
                    let base = r * cols;
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..cols {
                        let dh = dy[base + j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[base + j];
                        dgain[j] += dy[base + j] * xhat[base + j];
                        dbias[j] += dy[base + j];
                    }
                    mean_dh /= cols as f64;
                    mean_dh_h /= cols as f64;
                    for j in 0..cols {
                        let dh = dy[base + j] * g[j];
                        dx[base + j] = rstd[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                    }
                }
                acc(*x, &|j| dx[j]);
                acc(*gain, &|j| dgain[j]);
                acc(*bias, &|j| dbias[j]);
            }
            Op::Glu(a) => {
                let xv = self.value(*a).data();
                let cols = self.value(*a).cols();
                let half = cols / 2;
                let mut dx = vec![0.0; xv.len()];
                for (r, (xr, dxr)) in xv.chunks(cols).zip(dx.chunks_mut(cols)).enumerate() {
                    for j in 0..half {
                        let s = sigmoid(xr[half + j]);
                        let g = dy[r * half + j];
                        dxr[j] = g * s;
                        dxr[half + j] = g * xr[j] * s * (1.0 - s);
                    }
                }
                acc(*a, &|j| dx[j]);
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    let off = offset;
                    acc(*p, &|j| dy[(j / c) * total + off + j % c]);
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                let len = node.value.cols();
                let cols = self.value(*x).cols();
                let start = *start;
                acc(*x, &|j| {
                    let c = j % cols;
                    if c >= start && c < start + len {
                        dy[(j / cols) * len + c - start]
                    } else {
                        0.0
                    }
                });
            }
            Op::MeanAxis { x, len, inner } => {
                let (len, inner) = (*len, *inner);
                acc(*x, &|j| {
                    let i = j % inner;
                    let o = j / (len * inner);
                    dy[o * inner + i] / len as f64
                });
            }
            Op::Sum(a) => acc(*a, &|_| dy[0]),
            Op::WeightedSum { x, weights } => acc(*x, &|j| dy[0] * weights[j]),
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                let mut dt = vec![0.0; self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += dy[r * d + c];
                    }
                }
                acc(*table, &|j| dt[j]);
            }
            Op::Dropout { x, mask } => acc(*x, &|j| dy[j] * mask[j]),
            Op::RepeatRows(a) => {
                let d = self.value(*a).numel();
                let mut da = vec![0.0; d];
                for (j, g) in dy.iter().enumerate() {
                    da[j % d] += g;
                }
                acc(*a, &|j| da[j]);
            }
            Op::Reshape(a) => acc(*a, &|j| dy[j]),
        }
    }
}
