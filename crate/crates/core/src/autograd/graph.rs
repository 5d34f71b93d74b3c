//! Tape-style reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node to the [`Graph`]; node indices are therefore a
//! topological order and [`Graph::backward`] walks them in reverse exactly
//! once. Parameters enter through [`Graph::param`] and their gradients are
//! read back with [`Graph::param_grads`].

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Additive logit used at masked attention positions.
pub const MASK_NEG: f64 = -1e30;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Square,
    Sqrt,
    Exp,
    Log,
    Recip,
    Sin,
    Cos,
    Tanh,
    Gelu,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Recip => "recip",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Tanh => "tanh",
            Unary::Gelu => "gelu",
            Unary::Softplus => "softplus",
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Recip => 1.0 / x,
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Unary::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// d out / d x given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Recip => -y * y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Unary(Var, Unary),
    ClampMin(Var, f64),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// A single forward/backward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    /// Test hook: when set, the named op's backward rule is scaled by this factor.
    corrupt: Option<(&'static str, f64)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose backward rule for `op` is deliberately wrong by `factor`.
    /// Exists so gradient checks can be shown to fail.
    pub fn with_corrupted_backward(op: &'static str, factor: f64) -> Self {
        Self {
            corrupt: Some((op, factor)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient for `v`, zeros if it was not reached.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let (r, c) = node.value.shape();
        match &node.grad {
            Some(g) => Tensor::new(r, c, g.clone()).expect("grad shape"),
            None => Tensor::zeros(r, c),
        }
    }

    /// Differentiable leaf (inputs whose gradient the caller wants).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// Non-trainable leaf. Backward still writes a gradient, nobody reads it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, "param")?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// Gradients of every parameter touched by this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<_> = self.params.iter().map(|(&id, &v)| (id, self.grad(v))).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (r, c) = self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::new(r, c, data)?, node, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::Scale(a, k), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Concatenate along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::shape("concat_cols", format!("row counts {rows} vs {r}")));
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::shape("concat_rows", format!("col counts {cols} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::new(len, c, data)?, Op::SliceRows(a, start), "slice_rows")
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(r, len, |i, j| src.get(i, start + j));
        self.push(out, Op::SliceCols(a, start), "slice_cols")
    }

    /// Repeat a `1×n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if r != 1 {
            return Err(Error::shape("broadcast_rows", format!("expected 1 row, got {r}")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(rows, src.cols(), |_, j| src.get(0, j));
        self.push(out, Op::BroadcastRows(a), "broadcast_rows")
    }

    /// Repeat an `m×1` column `cols` times.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if c != 1 {
            return Err(Error::shape("broadcast_cols", format!("expected 1 col, got {c}")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(src.rows(), cols, |i, _| src.get(i, 0));
        self.push(out, Op::BroadcastCols(a), "broadcast_cols")
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a);
        if src.len() != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> ({rows}, {cols})", src.shape()),
            ));
        }
        let out = Tensor::new(rows, cols, src.data().to_vec())?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Column sums: `m×n -> 1×n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (o, x) in out.iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        self.push(Tensor::row(out), Op::SumRows(a), "sum_rows")
    }

    /// Row sums: `m×n -> m×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, data)?;
        self.push(out, Op::SumCols(a), "sum_cols")
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let out = self.value(a).map(|x| u.forward(x));
        self.push(out, Op::Unary(a, u), u.name())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Recip)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Cos)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    /// `max(x, floor)` elementwise; gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(floor));
        self.push(out, Op::ClampMin(a, floor), "clamp_min")
    }

    /// Row-wise softmax of `a + mask`, where `mask` is an additive `1×n` row
    /// (use [`MASK_NEG`] for excluded positions) shared by all rows.
    pub fn softmax(&mut self, a: Var, mask: Option<&[f64]>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.shape();
        if let Some(m) = mask {
            if m.len() != c {
                return Err(Error::shape("softmax", format!("mask len {} vs {c} cols", m.len())));
            }
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let logits: Vec<f64> = t
                .row_slice(i)
                .iter()
                .enumerate()
                .map(|(j, &x)| x + mask.map_or(0.0, |m| m[j]))
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        self.push(Tensor::new(r, c, data)?, Op::Softmax(a), "softmax")
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.shape();
        let mut data = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = t.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            data.extend(row.iter().map(|x| (x - mean) * inv));
        }
        self.push(Tensor::new(r, c, data)?, Op::LayerNorm(a, inv_std), "layer_norm")
    }

    /// Affine map `x·w + b` with `b` a `1×n` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let rows = self.shape(xw).0;
        let bb = self.broadcast_rows(b, rows)?;
        self.add(xw, bb)
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(acc) => {
                for (a, x) in acc.iter_mut().zip(g) {
                    *a += x;
                }
            }
            None => node.grad = Some(g.to_vec()),
        }
    }

    fn corruption(&self, op: &'static str) -> f64 {
        match self.corrupt {
            Some((name, f)) if name == op => f,
            _ => 1.0,
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {shape:?}")));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            self.backprop_node(idx, &op, &g);
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, op: &Op, g: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul(a, b) => {
                let k = self.corruption("mul");
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(g, y)| k * g * y)
                    .collect();
                let gb: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(g, x)| g * x).collect();
                self.accumulate(a, &ga);
                self.accumulate(b, &gb);
            }
            Op::Div(a, b) => {
                let (xa, xb) = (self.value(a).data(), self.value(b).data());
                let ga: Vec<f64> = g.iter().zip(xb).map(|(g, y)| g / y).collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(xa.iter().zip(xb))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                self.accumulate(a, &ga);
                self.accumulate(b, &gb);
            }
            Op::Scale(a, k) => {
                let ga: Vec<f64> = g.iter().map(|x| k * x).collect();
                self.accumulate(a, &ga);
            }
            Op::AddScalar(a) => self.accumulate(a, g),
            Op::MatMul(a, b) => {
                let k_corrupt = self.corruption("matmul");
                let (m, k) = self.shape(a);
                let n = self.shape(b).1;
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g, self.value(b).data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_tn_into(self.value(a).data(), g, &mut gb, m, k, n);
                if k_corrupt != 1.0 {
                    ga.iter_mut().for_each(|x| *x *= k_corrupt);
                }
                self.accumulate(a, &ga);
                self.accumulate(b, &gb);
            }
            Op::Transpose(a) => {
                let (r, c) = self.shape(a);
                // g is c×r
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::ConcatCols(ref parts) => {
                let total = self.nodes[idx].value.cols();
                let rows = self.nodes[idx].value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let mut gp = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    self.accumulate(p, &gp);
                    offset += c;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(a);
                let mut ga = vec![0.0; r * c];
                ga[start * c..start * c + g.len()].copy_from_slice(g);
                self.accumulate(a, &ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(a);
                let len = g.len() / r.max(1);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.accumulate(a, &ga);
            }
            Op::BroadcastRows(a) => {
                let c = self.shape(a).1;
                let mut ga = vec![0.0; c];
                for row in g.chunks(c) {
                    for (o, x) in ga.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.accumulate(a, &ga);
            }
            Op::BroadcastCols(a) => {
                let cols = self.nodes[idx].value.cols();
                let ga: Vec<f64> = g.chunks(cols).map(|row| row.iter().sum()).collect();
                self.accumulate(a, &ga);
            }
            Op::Reshape(a) => self.accumulate(a, g),
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.accumulate(a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                self.accumulate(a, &vec![g[0] / n as f64; n]);
            }
            Op::SumRows(a) => {
                let (r, c) = self.shape(a);
                let mut ga = Vec::with_capacity(r * c);
                for _ in 0..r {
                    ga.extend_from_slice(g);
                }
                self.accumulate(a, &ga);
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(a);
                let mut ga = Vec::with_capacity(r * c);
                for &gi in g.iter().take(r) {
                    ga.extend(std::iter::repeat_n(gi, c));
                }
                self.accumulate(a, &ga);
            }
            Op::Unary(a, u) => {
                let k = self.corruption(u.name());
                let x = self.value(a).data();
                let y = self.nodes[idx].value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (&x, &y))| k * g * u.derivative(x, y))
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::ClampMin(a, floor) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, &x)| if x > floor { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, &ga);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].value;
                let c = y.cols();
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(c).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    ga.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                self.accumulate(a, &ga);
            }
            Op::LayerNorm(a, ref inv_std) => {
                let y = &self.nodes[idx].value;
                let c = y.cols();
                let n = c as f64;
                let mut ga = Vec::with_capacity(y.len());
                for ((yr, gr), inv) in y.data().chunks(c).zip(g.chunks(c)).zip(inv_std) {
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = yr.iter().zip(gr).map(|(y, g)| y * g).sum::<f64>() / n;
                    ga.extend(yr.iter().zip(gr).map(|(y, g)| inv * (g - mean_g - y * mean_gy)));
                }
                self.accumulate(a, &ga);
            }
        }
    }
}
