//! Eagerly evaluated computation graph with reverse-mode differentiation.
//!
//! Every primitive computes its value when it is recorded. `backward` walks
//! the recorded nodes in reverse and emits the adjoint computation as new
//! nodes on the same graph, so gradients are themselves differentiable
//! (needed for gradient penalties such as R1).

use crate::conv::{self, ConvGeom};
use crate::error::{shape_err, AutodiffError, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Slope of the leaky rectifier used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Expand(Var),
    SumTo(Var),
    Reshape(Var),
    Sum(Var),
    SquaredNorm(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose2d { y: Var, w: Var, geom: ConvGeom },
    ConvWeight { x: Var, y: Var, geom: ConvGeom },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf | Constant => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            Transpose(a) | Scale(a, _) | AddScalar(a) | Expand(a) | SumTo(a) | Reshape(a) | Sum(a)
            | SquaredNorm(a) | LeakyRelu(a, _) | Tanh(a) | Sigmoid(a) | Softplus(a) | Softmax(a)
            | LogSoftmax(a) => vec![a],
            Conv2d { x, w, .. } => vec![x, w],
            ConvTranspose2d { y, w, .. } => vec![y, w],
            ConvWeight { x, y, .. } => vec![x, y],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoint: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient node for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<Var> {
        self.adjoint.get(v.0).copied().flatten()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// For each flat index of `big`, the flat index of the broadcast source in `small`.
fn broadcast_map(small: &[usize], big: &[usize]) -> Option<Vec<usize>> {
    if small.len() > big.len() {
        return None;
    }
    let offset = big.len() - small.len();
    let padded: Vec<usize> = std::iter::repeat_n(1, offset).chain(small.iter().copied()).collect();
    if padded.iter().zip(big).any(|(&s, &b)| s != 1 && s != b) {
        return None;
    }
    let mut strides = vec![0usize; big.len()];
    let mut acc = 1;
    for d in (0..big.len()).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    let total = numel(big);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; big.len()];
    for _ in 0..total {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..big.len()).rev() {
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(Tensor::raw(shape, data), op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(name, self.shape(a).to_vec(), data, op)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(name, self.shape(a).to_vec(), data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bv;
                }
            }
        }
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return shape_err("transpose", format!("expected a matrix, got {s:?}"));
        }
        let (m, n) = (s[0], s[1]);
        let v = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        self.push("transpose", vec![n, m], out, Op::Transpose(a))
    }

    /// Broadcast `a` to `shape` (right-aligned, size-1 axes repeat).
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let Some(map) = broadcast_map(self.shape(a), shape) else {
            return shape_err("expand", format!("{:?} -> {shape:?}", self.shape(a)));
        };
        let v = self.value(a).data();
        let data = map.iter().map(|&i| v[i]).collect();
        self.push("expand", shape.to_vec(), data, Op::Expand(a))
    }

    /// Sum `a` down to `shape`; the adjoint of [`Graph::expand`].
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let Some(map) = broadcast_map(shape, self.shape(a)) else {
            return shape_err("sum_to", format!("{:?} -> {shape:?}", self.shape(a)));
        };
        let mut out = vec![0.0; numel(shape)];
        for (&dst, &x) in map.iter().zip(self.value(a).data()) {
            out[dst] += x;
        }
        self.push("sum_to", shape.to_vec(), out, Op::SumTo(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() || shape.contains(&0) {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(a)));
        }
        let data = self.value(a).data().to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum of squares of all entries.
    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push("squared_norm", vec![1], vec![s], Op::SquaredNorm(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.map("leaky_relu", a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map("softplus", a, Op::Softplus(a), softplus)
    }

    fn last_axis(&self, name: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        let width = *s.last().unwrap();
        if width < 1 {
            return shape_err(name, "empty last axis");
        }
        Ok((self.value(a).numel() / width, width))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, width) = self.last_axis("softmax", a)?;
        let v = self.value(a).data();
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * width..(r + 1) * width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * width..(r + 1) * width];
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        self.push("softmax", self.shape(a).to_vec(), out, Op::Softmax(a))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, width) = self.last_axis("log_softmax", a)?;
        let v = self.value(a).data();
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * width..(r + 1) * width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (d, &x) in out[r * width..(r + 1) * width].iter_mut().zip(row) {
                *d = x - lse;
            }
        }
        self.push("log_softmax", self.shape(a).to_vec(), out, Op::LogSoftmax(a))
    }

    fn conv_dims(&self, name: &'static str, v: Var) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [a, b, c, d] => Ok([a, b, c, d]),
            ref s => shape_err(name, format!("expected rank 4, got {s:?}")),
        }
    }

    /// `x[n, ci, h, w]` convolved with `w[co, ci, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [_, ci, h, wd] = self.conv_dims("conv2d", x)?;
        let [_, wci, k, k2] = self.conv_dims("conv2d", w)?;
        if wci != ci || k != k2 {
            return shape_err("conv2d", format!("input {:?} with kernel {:?}", self.shape(x), self.shape(w)));
        }
        let Some(geom) = ConvGeom::forward((h, wd), k, stride, pad) else {
            return shape_err("conv2d", format!("kernel {k} stride {stride} pad {pad} on {h}x{wd}"));
        };
        self.conv2d_geom(x, w, geom)
    }

    fn conv2d_geom(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let [n, ci, h, wd] = self.conv_dims("conv2d", x)?;
        let [co, wci, ..] = self.conv_dims("conv2d", w)?;
        if (h, wd) != geom.in_hw || wci != ci {
            return shape_err("conv2d", format!("input {:?} does not match geometry", self.shape(x)));
        }
        let out = conv::conv2d(self.value(x).data(), self.value(w).data(), n, ci, co, &geom);
        let shape = vec![n, co, geom.out_hw.0, geom.out_hw.1];
        self.push("conv2d", shape, out, Op::Conv2d { x, w, geom })
    }

    /// Transposed convolution of `y[n, co, oh, ow]` with `w[co, ci, k, k]`,
    /// producing `[n, ci, (oh-1)*stride + k - 2*pad, ...]`.
    pub fn conv_transpose2d(&mut self, y: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [_, co, oh, ow] = self.conv_dims("conv_transpose2d", y)?;
        let [wco, _, k, k2] = self.conv_dims("conv_transpose2d", w)?;
        if wco != co || k != k2 {
            return shape_err(
                "conv_transpose2d",
                format!("input {:?} with kernel {:?}", self.shape(y), self.shape(w)),
            );
        }
        let Some(geom) = ConvGeom::transposed((oh, ow), k, stride, pad) else {
            return shape_err("conv_transpose2d", format!("kernel {k} stride {stride} pad {pad} on {oh}x{ow}"));
        };
        self.conv_transpose_geom(y, w, geom)
    }

    fn conv_transpose_geom(&mut self, y: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let [n, co, oh, ow] = self.conv_dims("conv_transpose2d", y)?;
        let [wco, ci, ..] = self.conv_dims("conv_transpose2d", w)?;
        if (oh, ow) != geom.out_hw || wco != co {
            return shape_err("conv_transpose2d", format!("input {:?} does not match geometry", self.shape(y)));
        }
        let out = conv::conv2d_transpose(self.value(y).data(), self.value(w).data(), n, ci, co, &geom);
        let shape = vec![n, ci, geom.in_hw.0, geom.in_hw.1];
        self.push("conv_transpose2d", shape, out, Op::ConvTranspose2d { y, w, geom })
    }

    fn conv_weight_geom(&mut self, x: Var, y: Var, geom: ConvGeom) -> Result<Var> {
        let [n, ci, ..] = self.conv_dims("conv_weight", x)?;
        let [_, co, ..] = self.conv_dims("conv_weight", y)?;
        let out = conv::conv2d_weight(self.value(x).data(), self.value(y).data(), n, ci, co, &geom);
        let shape = vec![co, ci, geom.kernel, geom.kernel];
        self.push("conv_weight", shape, out, Op::ConvWeight { x, y, geom })
    }

    fn constant_like(&mut self, v: Var, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(v);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::raw(t.shape().to_vec(), data);
        self.constant(t)
    }

    /// Sum over the last axis, keeping it as a size-1 axis, broadcast back.
    fn row_sum_broadcast(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut kept = shape.clone();
        *kept.last_mut().unwrap() = 1;
        let s = self.sum_to(a, &kept)?;
        self.expand(s, &shape)
    }

    /// Emit the adjoint contributions of node `v` given its adjoint `d`.
    fn node_adjoints(&mut self, v: Var, d: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[v.0].op.clone();
        let wants = |g: &Self, x: Var| g.nodes[x.0].needs_grad;
        let mut out = Vec::new();
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if wants(self, a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(d, bt)?));
                }
                if wants(self, b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, d)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(d)?)),
            Op::Add(a, b) => {
                out.push((a, d));
                out.push((b, d));
            }
            Op::Sub(a, b) => {
                out.push((a, d));
                if wants(self, b) {
                    out.push((b, self.neg(d)?));
                }
            }
            Op::Mul(a, b) => {
                if wants(self, a) {
                    out.push((a, self.mul(d, b)?));
                }
                if wants(self, b) {
                    out.push((b, self.mul(d, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(d, c)?)),
            Op::AddScalar(a) => out.push((a, d)),
            Op::Expand(a) => {
                let s = self.shape(a).to_vec();
                out.push((a, self.sum_to(d, &s)?));
            }
            Op::SumTo(a) | Op::Sum(a) => {
                let s = self.shape(a).to_vec();
                out.push((a, self.expand(d, &s)?));
            }
            Op::Reshape(a) => {
                let s = self.shape(a).to_vec();
                out.push((a, self.reshape(d, &s)?));
            }
            Op::SquaredNorm(a) => {
                let s = self.shape(a).to_vec();
                let de = self.expand(d, &s)?;
                let two_a = self.scale(a, 2.0)?;
                out.push((a, self.mul(de, two_a)?));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.constant_like(a, |x| if x > 0.0 { 1.0 } else { slope });
                out.push((a, self.mul(d, mask)?));
            }
            Op::Tanh(a) => {
                let y2 = self.mul(v, v)?;
                let neg = self.scale(y2, -1.0)?;
                let deriv = self.add_scalar(neg, 1.0)?;
                out.push((a, self.mul(d, deriv)?));
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(v, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let deriv = self.mul(v, one_minus)?;
                out.push((a, self.mul(d, deriv)?));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a)?;
                out.push((a, self.mul(d, s)?));
            }
            Op::Softmax(a) => {
                let dy = self.mul(d, v)?;
                let s = self.row_sum_broadcast(dy)?;
                let centered = self.sub(d, s)?;
                out.push((a, self.mul(v, centered)?));
            }
            Op::LogSoftmax(a) => {
                let p = self.softmax(a)?;
                let s = self.row_sum_broadcast(d)?;
                let ps = self.mul(p, s)?;
                out.push((a, self.sub(d, ps)?));
            }
            Op::Conv2d { x, w, geom } => {
                if wants(self, x) {
                    out.push((x, self.conv_transpose_geom(d, w, geom)?));
                }
                if wants(self, w) {
                    out.push((w, self.conv_weight_geom(x, d, geom)?));
                }
            }
            Op::ConvTranspose2d { y, w, geom } => {
                if wants(self, y) {
                    out.push((y, self.conv2d_geom(d, w, geom)?));
                }
                if wants(self, w) {
                    out.push((w, self.conv_weight_geom(d, y, geom)?));
                }
            }
            Op::ConvWeight { x, y, geom } => {
                if wants(self, x) {
                    out.push((x, self.conv_transpose_geom(y, d, geom)?));
                }
                if wants(self, y) {
                    out.push((y, self.conv2d_geom(x, d, geom)?));
                }
            }
        }
        Ok(out)
    }

    fn propagate(&mut self, output: Var, relevant: &[bool]) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(AutodiffError::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut adjoint: Vec<Option<Var>> = vec![None; output.0 + 1];
        let seed = self.constant(Tensor::full(self.shape(output), 1.0));
        adjoint[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(d) = adjoint[i] else { continue };
            if !relevant[i] {
                continue;
            }
            for (input, contrib) in self.node_adjoints(Var(i), d)? {
                if !relevant[input.0] {
                    continue;
                }
                adjoint[input.0] = Some(match adjoint[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(Gradients { adjoint })
    }

    /// Adjoints of every differentiable node that `output` depends on.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let relevant: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        self.propagate(output, &relevant)
    }

    /// Gradients of `output` with respect to `wrt`, recorded as graph nodes
    /// so they can be differentiated again. Unreached inputs get zeros.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let mut relevant = vec![false; self.nodes.len()];
        for w in wrt {
            relevant[w.0] = true;
        }
        for i in 0..self.nodes.len() {
            if !relevant[i] && self.nodes[i].needs_grad {
                relevant[i] = self.nodes[i].op.inputs().iter().any(|x| relevant[x.0]);
            }
        }
        let grads = self.propagate(output, &relevant)?;
        Ok(wrt
            .iter()
            .map(|&w| match grads.get(w) {
                Some(g) => g,
                None => self.constant(Tensor::zeros(self.shape(w))),
            })
            .collect())
    }
}
