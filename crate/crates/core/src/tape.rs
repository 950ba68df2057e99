//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and whatever the
//! backward rule needs. Nodes only reference earlier nodes, so the tape is
//! topologically ordered by construction and [`Tape::backward`] is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::gemm::{gemm, View};
use crate::tensor::Tensor;
use rand::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Additive logit used for masked attention keys.
pub const MASKED_LOGIT: f64 = -1.0e9;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Sum(Var),
    Mse(Var, Var),
    KlDiv {
        p: Var,
        q: Var,
        temperature: f64,
        p_prob: Vec<f64>,
        log_ratio: Vec<f64>,
        row_kl: Vec<f64>,
        q_prob: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Stack(Vec<Var>),
    Reshape(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// An append-only record of tensor operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records a leaf. Gradients reach it only if `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(true), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Accumulated gradient of a leaf, if any has been propagated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// `v` cut off from gradient flow. Values that no gradient can reach
    /// are returned as they are; others are copied into a constant.
    pub fn detach(&mut self, v: Var) -> Var {
        if !self.requires_grad(v) {
            return v;
        }
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Drops every node recorded after the first `len`, so a tape holding
    /// registered weights can be reused across inputs.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Clears every leaf gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        if !matches!(op, Op::Leaf) {
            let rg = self.op_requires_grad(&op);
            value.set_requires_grad(rg);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].value.requires_grad();
        match op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => rg(a) || rg(b),
            Op::AddRow(a, b) => rg(a) || rg(b),
            Op::MatMul { a, b, .. } => rg(a) || rg(b),
            Op::LayerNorm { x, gain, bias, .. } => rg(x) || rg(gain) || rg(bias),
            Op::KlDiv { p, q, .. } => rg(p) || rg(q),
            Op::Scale(x, _)
            | Op::Softmax(x)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Sum(x)
            | Op::SliceCols { x, .. }
            | Op::Reshape(x)
            | Op::Dropout { x, .. } => rg(x),
            Op::CrossEntropy { logits, .. } => rg(logits),
            Op::GatherRows { table, .. } => rg(table),
            Op::ConcatCols(parts) | Op::Stack(parts) => parts.iter().any(rg),
        }
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::Scale(x, factor))
    }

    /// Adds the vector `bias` (length = last axis of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [cols] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| gelu(v)).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::Tanh(x))
    }

    /// Inverted dropout. A rate of zero records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.data(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::Dropout { x, mask })
    }

    // ----- linear algebra -----

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (br, bc) = self.matrix("matmul", b)?;
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        let av = View::row_major(self.data(a), m, k);
        let mut bv = View::row_major(self.data(b), br, bc);
        if trans_b {
            bv = bv.t();
        }
        gemm(1.0, av, bv, 0.0, &mut out, n as isize, 1);
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(out, Op::MatMul { a, b, trans_b }))
    }

    /// Softmax over the last axis with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, cols) = self.value(x).rows_cols();
        let mut data = self.data(x).to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push(out, Op::Softmax(x))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
        }
        let xs = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xs[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    // ----- reductions and losses -----

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.data(a).len() as f64;
        let s: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Batch mean of `KL(softmax(p / t) ‖ softmax(q / t))` over rows.
    pub fn kl_div(&mut self, p_logits: Var, q_logits: Var, temperature: f64) -> Result<Var> {
        self.same_shape("kl_div", p_logits, q_logits)?;
        let (rows, cols) = self.value(p_logits).rows_cols();
        if cols < 2 {
            return Err(Error::InvalidArgument("kl_div needs at least 2 classes".into()));
        }
        if temperature <= 0.0 {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let lp = log_softmax_rows(self.data(p_logits), cols, temperature);
        let lq = log_softmax_rows(self.data(q_logits), cols, temperature);
        let p_prob: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let q_prob: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
        let log_ratio: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
        let row_kl: Vec<f64> = (0..rows)
            .map(|r| {
                let s = r * cols..(r + 1) * cols;
                p_prob[s.clone()]
                    .iter()
                    .zip(&log_ratio[s])
                    .map(|(p, d)| p * d)
                    .sum::<f64>()
            })
            .collect();
        // Rounding can leave a tiny negative for nearly equal rows.
        let value = row_kl.iter().map(|v| v.max(0.0)).sum::<f64>() / rows as f64;
        Ok(self.push(
            Tensor::scalar(value),
            Op::KlDiv {
                p: p_logits,
                q: q_logits,
                temperature,
                p_prob,
                log_ratio,
                row_kl,
                q_prob,
            },
        ))
    }

    /// Batch mean negative log-probability of the labelled class.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(logits).rows_cols();
        if labels.len() != rows {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: cols,
            });
        }
        let lp = log_softmax_rows(self.data(logits), cols, 1.0);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| -lp[r * cols + y])
            .sum::<f64>()
            / rows as f64;
        let probs = lp.iter().map(|v| v.exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    // ----- indexing and layout -----

    /// Rows of the matrix `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix("gather_rows", table)?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("gather_rows needs at least one id".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: rows });
        }
        let t = self.data(table);
        let data = ids
            .iter()
            .flat_map(|&i| t[i * cols..(i + 1) * cols].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![ids.len(), cols], data);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix("slice_cols", x)?;
        if len == 0 || start + len > cols {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let xs = self.data(x);
        let data = (0..rows)
            .flat_map(|r| xs[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![rows, len], data);
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let (rows, _) = self.matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![rows, total], data);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of nothing".into()))?;
        let shape = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.data(first).len());
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(Error::shape("stack", &shape, self.shape(p)));
            }
            data.extend_from_slice(self.data(p));
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend_from_slice(&shape);
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, Op::Stack(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().with_requires_grad(false).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    // ----- backward -----

    /// Propagates d`loss` to every leaf that requires grad, adding into the
    /// leaf gradient buffers. Calling it twice without [`Tape::zero_grad`]
    /// doubles the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.value.requires_grad() {
                continue;
            }
            let mut acc = Accum {
                adj: &mut adj,
                nodes: &self.nodes,
            };
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Add(a, b) => {
                    acc.add(*a, |d| axpy(d, 1.0, &g));
                    acc.add(*b, |d| axpy(d, 1.0, &g));
                }
                Op::Sub(a, b) => {
                    acc.add(*a, |d| axpy(d, 1.0, &g));
                    acc.add(*b, |d| axpy(d, -1.0, &g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    acc.add(*a, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(bv) {
                            *d += g * y;
                        }
                    });
                    acc.add(*b, |d| {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(av) {
                            *d += g * x;
                        }
                    });
                }
                Op::Scale(x, f) => acc.add(*x, |d| axpy(d, *f, &g)),
                Op::AddRow(x, bias) => {
                    acc.add(*x, |d| axpy(d, 1.0, &g));
                    acc.add(*bias, |d| {
                        let cols = d.len();
                        for row in g.chunks(cols) {
                            axpy(d, 1.0, row);
                        }
                    });
                }
                Op::MatMul { a, b, trans_b } => {
                    let (m, k) = self.nodes[a.0].value.rows_cols();
                    let (br, bc) = self.nodes[b.0].value.rows_cols();
                    let n = if *trans_b { br } else { bc };
                    let gv = View::row_major(&g, m, n);
                    let av = View::row_major(self.nodes[a.0].value.data(), m, k);
                    let mut bv = View::row_major(self.nodes[b.0].value.data(), br, bc);
                    if *trans_b {
                        bv = bv.t();
                    }
                    // dA = G · Bᵀ
                    acc.add(*a, |d| gemm(1.0, gv, bv.t(), 1.0, d, k as isize, 1));
                    // dB = Aᵀ · G, written through B's storage layout.
                    acc.add(*b, |d| {
                        let (rs, cs) = if *trans_b {
                            (1, k as isize)
                        } else {
                            (n as isize, 1)
                        };
                        gemm(1.0, av.t(), gv, 1.0, d, rs, cs)
                    });
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let (_, cols) = node.value.rows_cols();
                    acc.add(*x, |d| {
                        for ((d, g), y) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                            let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                            for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                                *d += y * (g - dot);
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
                    let gv = self.nodes[gain.0].value.data();
                    let cols = gv.len();
                    acc.add(*gain, |d| {
                        for (g, h) in g.chunks(cols).zip(xhat.chunks(cols)) {
                            for c in 0..cols {
                                d[c] += g[c] * h[c];
                            }
                        }
                    });
                    acc.add(*bias, |d| {
                        for g in g.chunks(cols) {
                            axpy(d, 1.0, g);
                        }
                    });
                    acc.add(*x, |d| {
                        let n = cols as f64;
                        for (r, ((d, g), h)) in d
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(xhat.chunks(cols))
                            .enumerate()
                        {
                            let mut sum_dh = 0.0;
                            let mut sum_dh_h = 0.0;
                            for c in 0..cols {
                                let dh = g[c] * gv[c];
                                sum_dh += dh;
                                sum_dh_h += dh * h[c];
                            }
                            let inv = inv_std[r];
                            for c in 0..cols {
                                let dh = g[c] * gv[c];
                                d[c] += inv / n * (n * dh - sum_dh - h[c] * sum_dh_h);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.nodes[x.0].value.data();
                    acc.add(*x, |d| {
                        for ((d, g), &v) in d.iter_mut().zip(&g).zip(xv) {
                            *d += g * gelu_grad(v);
                        }
                    });
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    acc.add(*x, |d| {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(y) {
                            *d += g * (1.0 - y * y);
                        }
                    });
                }
                Op::Sum(x) => acc.add(*x, |d| d.iter_mut().for_each(|d| *d += g[0])),
                Op::Mse(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let f = 2.0 * g[0] / av.len() as f64;
                    acc.add(*a, |d| {
                        for ((d, x), y) in d.iter_mut().zip(av).zip(bv) {
                            *d += f * (x - y);
                        }
                    });
                    acc.add(*b, |d| {
                        for ((d, x), y) in d.iter_mut().zip(av).zip(bv) {
                            *d -= f * (x - y);
                        }
                    });
                }
                Op::KlDiv {
                    p,
                    q,
                    temperature,
                    p_prob,
                    log_ratio,
                    row_kl,
                    q_prob,
                } => {
                    let cols = self.nodes[p.0].value.rows_cols().1;
                    let f = g[0] / (temperature * row_kl.len() as f64);
                    acc.add(*p, |d| {
                        for (r, kl) in row_kl.iter().enumerate() {
                            for c in r * cols..(r + 1) * cols {
                                d[c] += f * p_prob[c] * (log_ratio[c] - kl);
                            }
                        }
                    });
                    acc.add(*q, |d| {
                        for ((d, qp), pp) in d.iter_mut().zip(q_prob).zip(p_prob) {
                            *d += f * (qp - pp);
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let cols = probs.len() / labels.len();
                    let f = g[0] / labels.len() as f64;
                    acc.add(*logits, |d| {
                        axpy(d, f, probs);
                        for (r, &y) in labels.iter().enumerate() {
                            d[r * cols + y] -= f;
                        }
                    });
                }
                Op::GatherRows { table, ids } => {
                    let cols = node.value.rows_cols().1;
                    acc.add(*table, |d| {
                        for (row, &i) in g.chunks(cols).zip(ids) {
                            axpy(&mut d[i * cols..(i + 1) * cols], 1.0, row);
                        }
                    });
                }
                Op::SliceCols { x, start } => {
                    let (_, len) = node.value.rows_cols();
                    let cols = self.nodes[x.0].value.rows_cols().1;
                    acc.add(*x, |d| {
                        for (r, row) in g.chunks(len).enumerate() {
                            let off = r * cols + start;
                            axpy(&mut d[off..off + len], 1.0, row);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let (_, total) = node.value.rows_cols();
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.rows_cols().1;
                        acc.add(*p, |d| {
                            for (r, row) in d.chunks_mut(w).enumerate() {
                                axpy(row, 1.0, &g[r * total + off..r * total + off + w]);
                            }
                        });
                        off += w;
                    }
                }
                Op::Stack(parts) => {
                    let each = g.len() / parts.len();
                    for (j, p) in parts.iter().enumerate() {
                        acc.add(*p, |d| axpy(d, 1.0, &g[j * each..(j + 1) * each]));
                    }
                }
                Op::Reshape(x) => acc.add(*x, |d| axpy(d, 1.0, &g)),
                Op::Dropout { x, mask } => acc.add(*x, |d| {
                    for ((d, g), m) in d.iter_mut().zip(&g).zip(mask) {
                        *d += g * m;
                    }
                }),
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }
}

struct Accum<'a> {
    adj: &'a mut [Option<Vec<f64>>],
    nodes: &'a [Node],
}

impl Accum<'_> {
    fn add(&mut self, target: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[target.0];
        if !node.value.requires_grad() {
            return;
        }
        let buf = self.adj[target.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(buf);
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// GELU with the tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_softmax_rows(x: &[f64], cols: usize, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
        let lse = row
            .iter()
            .map(|v| (v / temperature - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        out.extend(row.iter().map(|v| v / temperature - lse));
    }
    out
}
