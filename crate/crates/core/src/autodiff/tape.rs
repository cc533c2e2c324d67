//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs, so the tape is topologically ordered by construction. `backward`
//! walks it once in reverse, accumulating vector-Jacobian products.

use std::sync::Arc;

use super::spline::SplineGrid;
use super::tensor::{axis_split, Tensor};
use crate::error::{Error, Result};

/// Epsilon inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { x: Var, rows: Vec<usize> },
    Transpose(Var),
    Reshape(Var),
    Sum { x: Var, axis: usize },
    SumAll(Var),
    Softmax { x: Var, axis: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Log(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Spline { x: Var, grid: Arc<SplineGrid> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamped: usize,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Gradient of `v`, zero when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`, accumulating into `out`.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose2(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
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

    /// Number of spline inputs clamped into their grid so far.
    pub fn clamp_count(&self) -> usize {
        self.clamped
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
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
            return Err(dim_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
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

    /// Adds `b` to every leading-batch slice of `x`; `b`'s shape must equal
    /// the trailing dimensions of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (xs, bs) = (tx.shape(), tb.shape());
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(dim_err("add_bias", tx, tb));
        }
        let n = tb.numel();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % n])
            .collect();
        let value = Tensor::new(xs.to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn div_scalar(&mut self, x: Var, c: f64) -> Var {
        self.scale(x, 1.0 / c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(dim_err("concat", self.value(*first), self.value(*p)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(Error::Index(format!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, alen, inner) = axis_split(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Selects rows along axis 0 (embedding lookup when `x` is a table).
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        if rows.is_empty() {
            return Err(Error::Index("gather of no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {bad} out of {n}")));
        }
        let width = t.numel() / n;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Gather {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::Shape(format!("transpose of rank-{} tensor", t.rank())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let value = Tensor::new(vec![c, r], transpose2(t.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Sums along `axis`, which is kept with length 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Shape(format!("sum axis {axis} of {:?}", t.shape())));
        }
        let (outer, alen, inner) = axis_split(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..alen {
                for i in 0..inner {
                    data[o * inner + i] += t.data()[(o * alen + a) * inner + i];
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Sum { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .value(x)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("mean axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.div_scalar(s, n as f64))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.div_scalar(s, n)
    }

    /// Softmax along `axis`, stabilised by subtracting the running maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Shape(format!("softmax axis {axis} of {:?}", t.shape())));
        }
        let (outer, alen, inner) = axis_split(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * alen + a) * inner + i;
                let m = (0..alen).map(|a| data[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..alen {
                    let e = (data[idx(a)] - m).exp();
                    data[idx(a)] = e;
                    z += e;
                }
                for a in 0..alen {
                    data[idx(a)] /= z;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Contract(format!("sqrt of negative value {bad}")));
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Contract(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// `x * sigmoid(x)`, composed from primitive operations.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let s = self.sigmoid(x);
        self.mul(x, s)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Normalizes over the last axis, then applies per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        for p in [gain, bias] {
            if self.value(p).shape() != [n] {
                return Err(dim_err("layer_norm", t, self.value(p)));
            }
        }
        let rows = t.rows();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Evaluates every B-spline basis function at every element of `x`.
    /// For `x` of shape `[.., n]` the result has shape `[.., n * (G + k)]`,
    /// basis index fastest. Out-of-grid inputs are clamped and counted.
    pub fn spline_basis(&mut self, x: Var, grid: Arc<SplineGrid>) -> Result<Var> {
        let t = self.value(x);
        let nb = grid.num_basis();
        let mut data = Vec::with_capacity(t.numel() * nb);
        let mut clamped = 0;
        for &v in t.data() {
            if grid.clamp(v).1 {
                clamped += 1;
            }
            data.extend(grid.basis(v));
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().expect("rank ≥ 1") *= nb;
        let value = Tensor::new(shape, data)?;
        self.clamped += clamped;
        Ok(self.push(value, Op::Spline { x, grid }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::Contract(format!("loss is not finite: {}", lv.item())));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        let y = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if nodes[a.0].requires_grad {
                    let bt = transpose2(tb.data(), k, n);
                    let mut ga = vec![0.0; m * k];
                    gemm_acc(g, &bt, &mut ga, m, n, k);
                    acc(*a, ga);
                }
                if nodes[b.0].requires_grad {
                    let at = transpose2(ta.data(), m, k);
                    let mut gb = vec![0.0; k * n];
                    gemm_acc(&at, g, &mut gb, k, m, n);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, g.iter().zip(tb.data()).map(|(g, b)| g * b).collect());
                acc(*b, g.iter().zip(ta.data()).map(|(g, a)| g * a).collect());
            }
            Op::AddBias(x, b) => {
                acc(*x, g.to_vec());
                let n = val(*b).numel();
                let mut gb = vec![0.0; n];
                for (i, gv) in g.iter().enumerate() {
                    gb[i % n] += gv;
                }
                acc(*b, gb);
            }
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(y.shape(), *axis);
                let total = y.shape()[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).shape()[*axis] * inner;
                    let mut gp = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * total + offset;
                        gp.extend_from_slice(&g[base..base + len]);
                    }
                    offset += len;
                    acc(*p, gp);
                }
            }
            Op::Slice { x, axis, start } => {
                let tx = val(*x);
                let (outer, alen, inner) = axis_split(tx.shape(), *axis);
                let len = y.shape()[*axis] * inner;
                let mut gx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    gx[base..base + len].copy_from_slice(&g[o * len..(o + 1) * len]);
                }
                acc(*x, gx);
            }
            Op::Gather { x, rows } => {
                let tx = val(*x);
                let width = tx.numel() / tx.shape()[0];
                let mut gx = vec![0.0; tx.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        gx[r * width + c] += g[i * width + c];
                    }
                }
                acc(*x, gx);
            }
            Op::Transpose(x) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                acc(*x, transpose2(g, r, c));
            }
            Op::Sum { x, axis } => {
                let tx = val(*x);
                let (outer, alen, inner) = axis_split(tx.shape(), *axis);
                let mut gx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    for a in 0..alen {
                        for i in 0..inner {
                            gx[(o * alen + a) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::SumAll(x) => acc(*x, vec![g[0]; val(*x).numel()]),
            Op::Softmax { x, axis } => {
                let (outer, alen, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut gx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * alen + a) * inner + i;
                        let dot: f64 = (0..alen).map(|a| g[idx(a)] * yd[idx(a)]).sum();
                        for a in 0..alen {
                            gx[idx(a)] = yd[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Sigmoid(x) => acc(
                *x,
                g.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect(),
            ),
            Op::Tanh(x) => acc(
                *x,
                g.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect(),
            ),
            Op::Relu(x) => acc(
                *x,
                g.iter()
                    .zip(val(*x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Sqrt(x) => acc(
                *x,
                g.iter()
                    .zip(y.data())
                    .map(|(g, &s)| if s > 0.0 { g / (2.0 * s) } else { 0.0 })
                    .collect(),
            ),
            Op::Log(x) => acc(
                *x,
                g.iter().zip(val(*x).data()).map(|(g, v)| g / v).collect(),
            ),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = y.cols();
                let rows = y.rows();
                let gd = val(*gain).data();
                let mut gx = vec![0.0; y.numel()];
                let mut ggain = vec![0.0; n];
                let mut gbias = vec![0.0; n];
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..n {
                        let d = gr[c] * gd[c];
                        mean_d += d;
                        mean_dh += d * hr[c];
                        ggain[c] += gr[c] * hr[c];
                        gbias[c] += gr[c];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    for c in 0..n {
                        let d = gr[c] * gd[c];
                        gx[r * n + c] = inv_std[r] * (d - mean_d - hr[c] * mean_dh);
                    }
                }
                acc(*x, gx);
                acc(*gain, ggain);
                acc(*bias, gbias);
            }
            Op::Spline { x, grid } => {
                let nb = grid.num_basis();
                let gx = val(*x)
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        grid.basis_derivative(v)
                            .iter()
                            .zip(&g[i * nb..(i + 1) * nb])
                            .map(|(d, g)| d * g)
                            .sum()
                    })
                    .collect();
                acc(*x, gx);
            }
        }
    }
}
