//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each primitive appends a
//! node holding its output value and enough saved state to replay the
//! vector-Jacobian product in [`Graph::backward`]. Nodes whose inputs carry no
//! gradient are recorded but skipped on the way back.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Guard used by layer normalisation and Adam denominators.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    LeakyRelu(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        input: Var,
        kernels: Var,
        stride: usize,
        cols: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient buffer of `v`, if any gradient reached it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    // keep the open interval even where the logistic rounds to 0 or 1
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copies the value of `v` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::contract("transpose needs a matrix"));
        }
        let t = ta.transpose();
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            add_into(row, tb.data());
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(t, Op::AddConst(x), rg)
    }

    /// Adds a non-differentiable tensor of the same shape (e.g. an attention mask bias).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(shape_err("add_const", tx, c));
        }
        let data = tx.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::AddConst(x), rg))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != mask.len() {
            return Err(Error::Shape {
                op: "mul_const",
                left: tx.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = tx.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MulConst(x, mask), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(t, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid_scalar);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    /// Natural logarithm; inputs must be positive.
    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x).map(libm::log);
        let rg = self.rg(x);
        self.push(t, Op::Log(x), rg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(t, Op::Clamp(x, lo, hi), rg)
    }

    /// Max-stabilised softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let rank = self.value(x).rank();
        match (rank, axis) {
            (1, 0) | (2, 1) => Ok(self.softmax_rows(x)),
            (2, 0) => {
                let t = self.transpose(x)?;
                let s = self.softmax_rows(t);
                self.transpose(s)
            }
            _ => Err(Error::contract("softmax axis out of range")),
        }
    }

    fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - m);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let rg = self.rg(x);
        self.push(t, Op::SoftmaxRows(x), rg)
    }

    /// Normalises each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.len() != n || tb.len() != n {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let rows = tx.len() / n;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / libm::sqrt(var + NORM_EPS);
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Valid temporal convolution of `input: time×in_ch` with `kernels: out_ch×width×in_ch`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, stride: usize) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernels));
        if ti.rank() != 2 || tk.rank() != 3 || tk.shape()[2] != ti.cols() {
            return Err(shape_err("conv1d", ti, tk));
        }
        if stride == 0 {
            return Err(Error::contract("conv1d stride must be positive"));
        }
        let (time, in_ch) = (ti.rows(), ti.cols());
        let (out_ch, width) = (tk.shape()[0], tk.shape()[1]);
        if time < width {
            return Err(Error::SequenceTooShort { len: time, width });
        }
        let out_t = (time - width) / stride + 1;
        let wc = width * in_ch;
        let mut cols = vec![0.0; out_t * wc];
        for t in 0..out_t {
            let start = t * stride * in_ch;
            cols[t * wc..(t + 1) * wc].copy_from_slice(&ti.data()[start..start + wc]);
        }
        let mut out = vec![0.0; out_t * out_ch];
        gemm_nt_acc(&cols, tk.data(), &mut out, out_t, wc, out_ch);
        let t = Tensor::matrix(out_t, out_ch, out)?;
        let rg = self.rg(input) || self.rg(kernels);
        Ok(self.push(
            t,
            Op::Conv1d {
                input,
                kernels,
                stride,
                cols,
            },
            rg,
        ))
    }

    /// Stacks matrices with equal column counts along the row (time) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows needs at least one input"))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != 2 || tp.cols() != n {
                return Err(shape_err("concat_rows", self.value(*first), tp));
            }
            rows += tp.rows();
            data.extend_from_slice(tp.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols needs at least one input"))?;
        let m = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.rank() != 2 || tp.rows() != m {
                return Err(shape_err("concat_cols", self.value(*first), tp));
            }
            total += tp.cols();
        }
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let tp = self.value(p);
            let c = tp.cols();
            for r in 0..m {
                data[r * total + off..r * total + off + c].copy_from_slice(tp.row(r));
            }
            off += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || start >= end || end > tx.rows() {
            return Err(Error::contract("slice_rows range out of bounds"));
        }
        let c = tx.cols();
        let data = tx.data()[start * c..end * c].to_vec();
        let t = Tensor::matrix(end - start, c, data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SliceRows(x, start), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || start >= end || end > tx.cols() {
            return Err(Error::contract("slice_cols range out of bounds"));
        }
        let (m, w) = (tx.rows(), end - start);
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&tx.row(r)[start..end]);
        }
        let t = Tensor::matrix(m, w, data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::SliceCols(x, start), rg))
    }

    /// Embedding lookup: row `i` of the output is row `ids[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 || ids.is_empty() {
            return Err(Error::contract("gather_rows needs a matrix and at least one id"));
        }
        let v = tt.rows();
        let mut data = Vec::with_capacity(ids.len() * tt.cols());
        for &id in ids {
            if id >= v {
                return Err(Error::UnknownToken { id, vocab_size: v });
            }
            data.extend_from_slice(tt.row(id));
        }
        let t = Tensor::matrix(ids.len(), tt.cols(), data)?;
        let rg = self.rg(table);
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Column means of an `m×n` matrix, as a `1×n` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::contract("mean_rows needs a matrix"));
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; n];
        for row in tx.data().chunks(n) {
            add_into(&mut out, row);
        }
        for v in out.iter_mut() {
            *v /= m as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Fully connected layer `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Replays the tape from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |da| gemm_nt_acc(g, tb.data(), da, m, n, k));
                acc(*b, &mut |db| gemm_tn_acc(ta.data(), g, db, m, k, n));
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                acc(*a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| {
                    for (d, x) in db.iter_mut().zip(g) {
                        *d -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |da| {
                    for ((d, x), y) in da.iter_mut().zip(g).zip(tb.data()) {
                        *d += x * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, x), y) in db.iter_mut().zip(g).zip(ta.data()) {
                        *d += x * y;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let n = node.value.cols();
                acc(*x, &mut |dx| add_into(dx, g));
                acc(*b, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |dx| {
                for (d, v) in dx.iter_mut().zip(g) {
                    *d += c * v;
                }
            }),
            Op::AddConst(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::MulConst(x, mask) => acc(*x, &mut |dx| {
                for ((d, v), m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += v * m;
                }
            }),
            Op::LeakyRelu(x, slope) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, v), xi) in dx.iter_mut().zip(g).zip(tx.data()) {
                        *d += if *xi >= 0.0 { *v } else { slope * v };
                    }
                });
            }
            Op::Relu(x) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, v), xi) in dx.iter_mut().zip(g).zip(tx.data()) {
                        if *xi > 0.0 {
                            *d += v;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |dx| {
                for ((d, v), y) in dx.iter_mut().zip(g).zip(node.value.data()) {
                    *d += v * y * (1.0 - y);
                }
            }),
            Op::Log(x) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, v), xi) in dx.iter_mut().zip(g).zip(tx.data()) {
                        *d += v / xi;
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let tx = &nodes[x.0].value;
                acc(*x, &mut |dx| {
                    for ((d, v), xi) in dx.iter_mut().zip(g).zip(tx.data()) {
                        if xi >= lo && xi <= hi {
                            *d += v;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                acc(*x, &mut |dx| {
                    for ((drow, grow), yrow) in dx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(node.value.data().chunks(n))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = node.value.cols();
                let tg = &nodes[gain.0].value;
                acc(*gain, &mut |dgain| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dgain[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*bias, &mut |dbias| {
                    for grow in g.chunks(n) {
                        add_into(dbias, grow);
                    }
                });
                acc(*x, &mut |dx| {
                    let mut dh = vec![0.0; n];
                    for (r, ((drow, grow), hrow)) in dx
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let mut mean_dh = 0.0;
                        let mut mean_dhh = 0.0;
                        for j in 0..n {
                            dh[j] = grow[j] * tg.data()[j];
                            mean_dh += dh[j];
                            mean_dhh += dh[j] * hrow[j];
                        }
                        mean_dh /= n as f64;
                        mean_dhh /= n as f64;
                        for j in 0..n {
                            drow[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::Conv1d {
                input,
                kernels,
                stride,
                cols,
            } => {
                let tk = &nodes[kernels.0].value;
                let in_ch = tk.shape()[2];
                let wc = tk.shape()[1] * in_ch;
                let (out_t, out_ch) = (node.value.rows(), node.value.cols());
                acc(*kernels, &mut |dk| gemm_tn_acc(g, cols, dk, out_t, out_ch, wc));
                acc(*input, &mut |di| {
                    let mut dcols = vec![0.0; out_t * wc];
                    gemm_acc(g, tk.data(), &mut dcols, out_t, out_ch, wc);
                    for t in 0..out_t {
                        let start = t * stride * in_ch;
                        add_into(&mut di[start..start + wc], &dcols[t * wc..(t + 1) * wc]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &mut |dp| add_into(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    acc(*p, &mut |dp| {
                        for (r, drow) in dp.chunks_mut(c).enumerate() {
                            add_into(drow, &g[r * total + off..r * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::SliceRows(x, start) => {
                let c = node.value.cols();
                acc(*x, &mut |dx| add_into(&mut dx[start * c..start * c + g.len()], g));
            }
            Op::SliceCols(x, start) => {
                let total = nodes[x.0].value.cols();
                let w = node.value.cols();
                acc(*x, &mut |dx| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut dx[r * total + start..r * total + start + w], grow);
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let c = node.value.cols();
                acc(*table, &mut |dt| {
                    for (grow, &id) in g.chunks(c).zip(ids) {
                        add_into(&mut dt[id * c..(id + 1) * c], grow);
                    }
                });
            }
            Op::MeanRows(x) => {
                let tx = &nodes[x.0].value;
                let m = tx.rows() as f64;
                acc(*x, &mut |dx| {
                    for drow in dx.chunks_mut(g.len()) {
                        for (d, v) in drow.iter_mut().zip(g) {
                            *d += v / m;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0] / n;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_check, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let mut g = Graph::new();
        let i = g.constant(m(2, 2, &[1., 0., 0., 1.]));
        let b = g.constant(m(2, 2, &[3., 4., 5., 6.]));
        let p = g.matmul(i, b).unwrap();
        assert_eq!(g.value(p).data(), &[3., 4., 5., 6.]);

        let a = g.constant(m(1, 2, &[1., 2.]));
        let c = g.constant(m(2, 1, &[3., 4.]));
        let p = g.matmul(a, c).unwrap();
        assert_eq!(g.value(p).data(), &[11.]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        let mut expected = [0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    expected[i * 2 + j] += a.get2(i, k) * b.get2(k, j);
                }
            }
        }
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let p = g.matmul(va, vb).unwrap();
        for (x, y) in g.value(p).data().iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, [2, 3]);
                assert_eq!(right, [2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv1d_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(m(4, 1, &[1., 2., 3., 4.]));
        let k = g.constant(Tensor::new(vec![1, 2, 1], vec![1., 1.]).unwrap());
        let y = g.conv1d(x, k, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3., 5., 7.]);

        let z = g.constant(Tensor::zeros(&[6, 2]));
        let k2 = g.constant(Tensor::full(&[3, 2, 2], 0.7));
        let y = g.conv1d(z, k2, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_matches_nested_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&[12, 3], &mut rng);
        let k = random_tensor(&[2, 10, 3], &mut rng);
        let mut expected = [0.0; 6];
        for t in 0..3 {
            for o in 0..2 {
                for w in 0..10 {
                    for c in 0..3 {
                        expected[t * 2 + o] += x.get2(t + w, c) * k.data()[(o * 10 + w) * 3 + c];
                    }
                }
            }
        }
        let mut g = Graph::new();
        let (vx, vk) = (g.constant(x), g.constant(k));
        let y = g.conv1d(vx, vk, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 2]);
        for (a, b) in g.value(y).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_too_short() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 1]));
        let k = g.constant(Tensor::zeros(&[1, 4, 1]));
        assert_eq!(
            g.conv1d(x, k, 1),
            Err(Error::SequenceTooShort { len: 3, width: 4 })
        );
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3], vec![0.; 3]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(Tensor::new(vec![2], vec![1000., 1000.]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        // exp-normalise with compensated summation as the reference
        let x = g.constant(Tensor::new(vec![3], vec![1., 2., 3.]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let z = e[0] + e[1] + e[2];
        for (a, b) in g.value(y).data().iter().zip(e.iter().map(|v| v / z)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_axis_zero_columns_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 3, &[1., -2., 0.5, 3., 0., 7.]));
        let y = g.softmax(x, 0).unwrap();
        let t = g.value(y);
        for j in 0..3 {
            assert!((t.get2(0, j) + t.get2(1, j) - 1.0).abs() < 1e-12);
        }
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn leaky_relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2], vec![5., -5.]).unwrap());
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).data(), &[5., -1.]);
        let z = g.constant(Tensor::new(vec![4], vec![0., 1.3, -40., 800.]).unwrap());
        let s = g.sigmoid(z);
        let sv = g.value(s).data().to_vec();
        assert_eq!(sv[0], 0.5);
        assert!(sv.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((sigmoid_scalar(1.3) - (1.0 - sigmoid_scalar(-1.3))).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_gradient_is_slope() {
        let x0 = Tensor::scalar(-3.0);
        let worst = finite_diff_check(&[x0], 1e-5, |g, v| Ok(g.leaky_relu(v[0], 0.2)));
        assert!(worst < 1e-6);
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(-3.0));
        let y = g.leaky_relu(x, 0.2);
        let gr = g.backward(y).unwrap();
        assert!((gr.get(x).unwrap()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.7));
        let y = g.sigmoid(x);
        let gr = g.backward(y).unwrap();
        let s = sigmoid_scalar(0.7);
        let h = 1e-5;
        let fd = (sigmoid_scalar(0.7 + h) - sigmoid_scalar(0.7 - h)) / (2.0 * h);
        assert!((gr.get(x).unwrap()[0] - fd).abs() < 1e-6);
        assert!((gr.get(x).unwrap()[0] - s * (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(m(1, 4, &[2.5; 4]));
        let gain = g.constant(Tensor::full(&[4], 1.0));
        let bias = g.constant(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x1 = g.constant(m(3, 1, &[1., 2., 3.]));
        let g1 = g.constant(Tensor::full(&[1], 1.0));
        let b1 = g.constant(Tensor::zeros(&[1]));
        let y1 = g.layer_norm(x1, g1, b1).unwrap();
        assert!(g.value(y1).is_finite());
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[4, 16], &mut rng);
        let gain = random_tensor(&[16], &mut rng);
        let bias = random_tensor(&[16], &mut rng);
        let mut g = Graph::new();
        let (vx, vg, vb) = (g.constant(x), g.constant(gain.clone()), g.constant(bias.clone()));
        let y = g.layer_norm(vx, vg, vb).unwrap();
        for r in 0..4 {
            let row = g.value(y).row(r);
            // undo the affine part and check the normalised statistics directly
            let h: Vec<f64> = row
                .iter()
                .zip(gain.data().iter().zip(bias.data()))
                .map(|(v, (gn, b))| (v - b) / gn)
                .collect();
            let mean = h.iter().sum::<f64>() / 16.0;
            let var = h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_sum_and_mse_closed_forms() {
        let mut g = Graph::new();
        let p = g.param(m(2, 2, &[1., -2., 3., 0.5]));
        let s = g.sum(p);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(p).unwrap(), &[1.0; 4]);

        let target = m(2, 2, &[0., 1., 1., 1.]);
        let mut g = Graph::new();
        let p = g.param(m(2, 2, &[1., -2., 3., 0.5]));
        let t = g.constant(target.clone());
        let l = g.mse(p, t).unwrap();
        let gr = g.backward(l).unwrap();
        let pv = [1., -2., 3., 0.5];
        for i in 0..4 {
            let want = 2.0 * (pv[i] - target.data()[i]) / 4.0;
            assert!((gr.get(p).unwrap()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(m(2, 2, &[1., 2., 3., 4.]));
        let x = g.param(m(1, 2, &[1., 1.]));
        let y = g.matmul(x, w).unwrap();
        let l = g.sum(y);
        let gr = g.backward(l).unwrap();
        assert!(gr.get(w).is_none());
        assert_eq!(gr.get(x).unwrap(), &[3., 7.]);
    }
}
