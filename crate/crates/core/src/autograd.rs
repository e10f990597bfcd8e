//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is rebuilt for every minibatch. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] simply walks it in reverse. Leaves created with
//! [`Graph::constant`] never receive gradients, and neither does any node
//! whose inputs are all constant.
//!
//! Every forward op checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of letting a non-finite value escape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{contract, domain, Error, Result};
use crate::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise single-input functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Neg,
    Square,
    Exp,
    Log,
    Tanh,
    Relu,
    Sigmoid,
    Softplus,
    LogSigmoid,
    Sin,
    Cos,
    Atan,
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Neg => "neg",
            UnaryFn::Square => "square",
            UnaryFn::Exp => "exp",
            UnaryFn::Log => "log",
            UnaryFn::Tanh => "tanh",
            UnaryFn::Relu => "relu",
            UnaryFn::Sigmoid => "sigmoid",
            UnaryFn::Softplus => "softplus",
            UnaryFn::LogSigmoid => "log_sigmoid",
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Atan => "atan",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryFn::Neg => -x,
            UnaryFn::Square => x * x,
            UnaryFn::Exp => x.exp(),
            UnaryFn::Log => x.ln(),
            UnaryFn::Tanh => x.tanh(),
            UnaryFn::Relu => x.max(0.0),
            UnaryFn::Sigmoid => sigmoid(x),
            UnaryFn::Softplus => softplus(x),
            UnaryFn::LogSigmoid => -softplus(-x),
            UnaryFn::Sin => x.sin(),
            UnaryFn::Cos => x.cos(),
            UnaryFn::Atan => x.atan(),
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryFn::Neg => -1.0,
            UnaryFn::Square => 2.0 * x,
            UnaryFn::Exp => y,
            UnaryFn::Log => 1.0 / x,
            UnaryFn::Tanh => 1.0 - y * y,
            UnaryFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryFn::Sigmoid => y * (1.0 - y),
            UnaryFn::Softplus => sigmoid(x),
            UnaryFn::LogSigmoid => sigmoid(-x),
            UnaryFn::Sin => x.cos(),
            UnaryFn::Cos => -x.sin(),
            UnaryFn::Atan => 1.0 / (1.0 + x * x),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryFn {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryFn, Var, Var),
    Unary(UnaryFn, Var),
    Scale(Var, f64),
    Offset(Var),
    Clamp(Var, f64, f64),
    Reduce { input: Var, axes: Vec<usize>, mean: bool },
    Concat { parts: Vec<Var>, axis: usize },
    Gather { input: Var, index: Vec<usize> },
    Scatter { input: Var, index: Vec<usize> },
    RowFn { input: Var, grad: Tensor },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Leaf that is differentiated against (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (data, conditions, base draws).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
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

    /// Accumulated gradient of the last `backward` root(s) w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, f: BinaryFn, a: Var, b: Var) -> Result<Var> {
        let name = match f {
            BinaryFn::Add => "add",
            BinaryFn::Sub => "sub",
            BinaryFn::Mul => "mul",
            BinaryFn::Div => "div",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        if f == BinaryFn::Div && self.value(b).data().contains(&0.0) {
            return Err(domain("div", "division by zero"));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; out_shape.iter().product()];
        let op = |x: f64, y: f64| match f {
            BinaryFn::Add => x + y,
            BinaryFn::Sub => x - y,
            BinaryFn::Mul => x * y,
            BinaryFn::Div => x / y,
        };
        if sa == sb {
            for ((o, x), y) in out.iter_mut().zip(da).zip(db) {
                *o = op(*x, *y);
            }
        } else {
            let st_a = broadcast_strides(&sa, &out_shape);
            let st_b = broadcast_strides(&sb, &out_shape);
            for_each_broadcast(&out_shape, &st_a, &st_b, |o, i, j| out[o] = op(da[i], db[j]));
        }
        let t = Tensor::new(out_shape, out)?;
        self.push(name, t, Op::Binary(f, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryFn::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryFn::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryFn::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryFn::Div, a, b)
    }

    pub fn unary(&mut self, f: UnaryFn, a: Var) -> Result<Var> {
        let x = self.value(a);
        if f == UnaryFn::Log {
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(domain("log", format!("nonpositive argument {bad}")));
            }
        }
        let out: Vec<f64> = x.data().iter().map(|&v| f.apply(v)).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        self.push(f.name(), t, Op::Unary(f, a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Neg, a)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Square, a)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Log, a)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Tanh, a)
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Relu, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::Sigmoid, a)
    }
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryFn::LogSigmoid, a)
    }

    /// `a * factor` for a constant factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let x = self.value(a);
        let out: Vec<f64> = x.data().iter().map(|&v| v * factor).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        self.push("scale", t, Op::Scale(a, factor), &[a])
    }

    /// `a + offset` for a constant offset.
    pub fn offset(&mut self, a: Var, offset: f64) -> Result<Var> {
        let x = self.value(a);
        let out: Vec<f64> = x.data().iter().map(|&v| v + offset).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        self.push("offset", t, Op::Offset(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let x = self.value(a);
        let out: Vec<f64> = x.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        self.push("clamp", t, Op::Clamp(a, lo, hi), &[a])
    }

    fn reduce(&mut self, a: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.shape(a).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&ax| ax >= shape.len()) {
            return Err(Error::Shape {
                op: name,
                lhs: shape,
                rhs: axes,
            });
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        let count: usize = axes.iter().map(|&ax| shape[ax]).product();
        let kept = kept_strides(&shape, &axes);
        let zero = vec![0; shape.len()];
        let mut out = vec![0.0; out_shape.iter().product()];
        let src = self.value(a).data();
        for_each_broadcast(&shape, &kept, &zero, |i, o, _| out[o] += src[i]);
        if mean && count > 0 {
            let inv = 1.0 / count as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(out_shape, out)?;
        self.push(name, t, Op::Reduce { input: a, axes, mean }, &[a])
    }

    /// Sum over `axes` (removed from the shape). An empty axis list is the identity.
    pub fn sum(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, axes, false)
    }

    pub fn mean(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(a, axes, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, &axes, false)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, &axes, true)
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: base,
                rhs: vec![axis],
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let chunk = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(out_shape, out)?;
        self.push(
            "concat",
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Keeps the last-axis entries where `mask` is true.
    pub fn mask_select(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(a).last_dim() || self.shape(a).is_empty() {
            return Err(Error::Shape {
                op: "mask_select",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let index: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        self.gather(a, &index)
    }

    /// Picks last-axis columns `index` (in that order).
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let w = x.last_dim();
        if x.rank() == 0 || index.iter().any(|&i| i >= w) {
            return Err(Error::Shape {
                op: "gather",
                lhs: x.shape().to_vec(),
                rhs: index.to_vec(),
            });
        }
        let rows = x.rows();
        let mut out = Vec::with_capacity(rows * index.len());
        for r in 0..rows {
            let row = x.row(r);
            out.extend(index.iter().map(|&i| row[i]));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = index.len();
        let t = Tensor::new(shape, out)?;
        self.push(
            "gather",
            t,
            Op::Gather {
                input: a,
                index: index.to_vec(),
            },
            &[a],
        )
    }

    /// Places the last-axis columns of `a` at positions `index` of a zero
    /// tensor whose last dimension is `width`.
    pub fn scatter(&mut self, a: Var, index: &[usize], width: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rank() == 0 || x.last_dim() != index.len() || index.iter().any(|&i| i >= width) {
            return Err(Error::Shape {
                op: "scatter",
                lhs: x.shape().to_vec(),
                rhs: index.to_vec(),
            });
        }
        let rows = x.rows();
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            let row = x.row(r);
            for (j, &i) in index.iter().enumerate() {
                out[r * width + i] = row[j];
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let t = Tensor::new(shape, out)?;
        self.push(
            "scatter",
            t,
            Op::Scatter {
                input: a,
                index: index.to_vec(),
            },
            &[a],
        )
    }

    /// Attaches an externally evaluated scalar function of each row.
    ///
    /// `values[b] = f(row b)` and `grads` (same shape as `a`) holds `∇f` at each
    /// row. The result has shape `[rows]`.
    pub fn row_fn(&mut self, a: Var, values: Vec<f64>, grads: Tensor) -> Result<Var> {
        let x = self.value(a);
        if values.len() != x.rows() || grads.shape() != x.shape() {
            return Err(Error::Shape {
                op: "row_fn",
                lhs: x.shape().to_vec(),
                rhs: grads.shape().to_vec(),
            });
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("row_fn gradient"));
        }
        let t = Tensor::vector(values);
        self.push("row_fn", t, Op::RowFn { input: a, grad: grads }, &[a])
    }

    /// Reverse sweep from a scalar `root`, adding `∂root/∂node` into every
    /// reachable node that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut fresh: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        fresh[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = fresh[i].take() else { continue };
            self.propagate(i, &g, &mut fresh);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, fresh: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(a) {
                    let ga = slot(fresh, *a, av.shape());
                    gemm(m, n, k, g.data(), false, bv.data(), true, ga.data_mut(), true);
                }
                if wants(b) {
                    let gb = slot(fresh, *b, bv.shape());
                    gemm(k, m, n, av.data(), true, g.data(), false, gb.data_mut(), true);
                }
            }
            Op::Binary(f, a, b) => self.binary_backward(*f, *a, *b, node.value.shape(), g, fresh),
            Op::Unary(f, a) => {
                if wants(a) {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let ga = slot(fresh, *a, node.value.shape()).data_mut();
                    for j in 0..ga.len() {
                        ga[j] += g.data()[j] * f.derivative(x[j], y[j]);
                    }
                }
            }
            Op::Scale(a, factor) => {
                if wants(a) {
                    let ga = slot(fresh, *a, node.value.shape()).data_mut();
                    for (o, gi) in ga.iter_mut().zip(g.data()) {
                        *o += gi * factor;
                    }
                }
            }
            Op::Offset(a) => {
                if wants(a) {
                    slot(fresh, *a, node.value.shape()).add_assign(g);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if wants(a) {
                    let x = self.value(*a).data();
                    let ga = slot(fresh, *a, node.value.shape()).data_mut();
                    for j in 0..ga.len() {
                        if x[j] >= *lo && x[j] <= *hi {
                            ga[j] += g.data()[j];
                        }
                    }
                }
            }
            Op::Reduce { input, axes, mean } => {
                if wants(input) {
                    let shape = self.shape(*input).to_vec();
                    let count: usize = axes.iter().map(|&ax| shape[ax]).product();
                    let factor = if *mean && count > 0 { 1.0 / count as f64 } else { 1.0 };
                    let kept = kept_strides(&shape, axes);
                    let zero = vec![0; shape.len()];
                    let gi = slot(fresh, *input, &shape).data_mut();
                    let gd = g.data();
                    for_each_broadcast(&shape, &kept, &zero, |j, o, _| gi[j] += gd[o] * factor);
                }
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let ps = self.shape(*p).to_vec();
                    let chunk = ps[*axis] * inner;
                    if wants(p) {
                        let gp = slot(fresh, *p, &ps).data_mut();
                        for o in 0..outer {
                            let src = &g.data()[o * total + offset..o * total + offset + chunk];
                            for (d, s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Gather { input, index } => {
                if wants(input) {
                    let shape = self.shape(*input).to_vec();
                    let w = *shape.last().unwrap();
                    let gi = slot(fresh, *input, &shape).data_mut();
                    let k = index.len();
                    for r in 0..g.numel() / k.max(1) {
                        for (j, &c) in index.iter().enumerate() {
                            gi[r * w + c] += g.data()[r * k + j];
                        }
                    }
                }
            }
            Op::Scatter { input, index } => {
                if wants(input) {
                    let shape = self.shape(*input).to_vec();
                    let w = node.value.last_dim();
                    let k = index.len();
                    let gi = slot(fresh, *input, &shape).data_mut();
                    for r in 0..gi.len() / k.max(1) {
                        for (j, &c) in index.iter().enumerate() {
                            gi[r * k + j] += g.data()[r * w + c];
                        }
                    }
                }
            }
            Op::RowFn { input, grad } => {
                if wants(input) {
                    let w = grad.last_dim();
                    let gi = slot(fresh, *input, grad.shape()).data_mut();
                    for (r, gr) in g.data().iter().enumerate() {
                        for c in 0..w {
                            gi[r * w + c] += gr * grad.data()[r * w + c];
                        }
                    }
                }
            }
        }
    }

    fn binary_backward(
        &self,
        f: BinaryFn,
        a: Var,
        b: Var,
        out_shape: &[usize],
        g: &Tensor,
        fresh: &mut [Option<Tensor>],
    ) {
        let (wa, wb) = (self.nodes[a.0].requires_grad, self.nodes[b.0].requires_grad);
        let (av, bv) = (self.value(a), self.value(b));
        let st_a = broadcast_strides(av.shape(), out_shape);
        let st_b = broadcast_strides(bv.shape(), out_shape);
        let (x, y, gd) = (av.data(), bv.data(), g.data());
        // d(out)/da and d(out)/db for each element
        let partials = |i: usize, j: usize| -> (f64, f64) {
            match f {
                BinaryFn::Add => (1.0, 1.0),
                BinaryFn::Sub => (1.0, -1.0),
                BinaryFn::Mul => (y[j], x[i]),
                BinaryFn::Div => (1.0 / y[j], -x[i] / (y[j] * y[j])),
            }
        };
        if wa {
            let mut ga = fresh[a.0].take().unwrap_or_else(|| Tensor::zeros(av.shape()));
            let gad = ga.data_mut();
            for_each_broadcast(out_shape, &st_a, &st_b, |o, i, j| gad[i] += gd[o] * partials(i, j).0);
            fresh[a.0] = Some(ga);
        }
        if wb {
            let mut gb = fresh[b.0].take().unwrap_or_else(|| Tensor::zeros(bv.shape()));
            let gbd = gb.data_mut();
            for_each_broadcast(out_shape, &st_a, &st_b, |o, i, j| gbd[j] += gd[o] * partials(i, j).1);
            fresh[b.0] = Some(gb);
        }
    }
}

fn slot<'a>(fresh: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    fresh[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Strides mapping an input index onto the reduced output (0 on reduced axes).
fn kept_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if !axes.contains(&i) {
            strides[i] = acc;
            acc *= shape[i];
        }
    }
    strides
}

/// `c (+)= op(a) · op(b)` for row-major `op(a): m×k`, `op(b): k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides describe exactly the m×k, k×n and m×n row-major
    // buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
