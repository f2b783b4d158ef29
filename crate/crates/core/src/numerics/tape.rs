//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] borrows a [`ModelParams`] and records every primitive applied
//! to parameter leaves and constants. [`Tape::backward`] walks the record in
//! reverse and returns gradients for every parameter, zero for unused ones.
//! Nodes are appended in evaluation order, so the record is topologically
//! sorted by construction.

use std::borrow::Cow;

use rand::Rng;

use super::{Gradients, ModelParams, ParamId, Tensor};
use crate::error::{Error, Result};

/// Added to the norm before dividing in [`Tape::l2_normalize`].
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Row {
        param: ParamId,
        row: usize,
    },
    MatVec {
        m: NodeId,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Vec<f64>),
    Scale(NodeId, f64),
    AddN(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Dot(NodeId, NodeId),
    Sum(NodeId),
    SoftmaxMasked {
        x: NodeId,
        mask: Vec<bool>,
    },
    LogProbMasked {
        x: NodeId,
        mask: Vec<bool>,
        target: usize,
        probs: Vec<f64>,
    },
    L2Normalize {
        x: NodeId,
        norm: f64,
    },
    Householder {
        mu: NodeId,
        w: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Row { .. } => "embedding_lookup",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::AddN(_) => "add_n",
            Op::Mean(_) => "mean_pool",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::SoftmaxMasked { .. } => "softmax_masked",
            Op::LogProbMasked { .. } => "log_prob_masked",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Householder { .. } => "householder",
        }
    }
}

struct Node<'p> {
    op: Op,
    value: Cow<'p, Tensor>,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<NodeId>>,
    first_non_finite: Option<usize>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            first_non_finite: None,
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.data()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Fails if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            None => Ok(()),
            Some(node) => Err(Error::NonFinite {
                op: self.nodes[node].op.name(),
                node,
            }),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> NodeId {
        self.constant(Tensor::vector(data))
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.constant(Tensor::zeros(&[len]))
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let value = self.params.get(id);
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Cow::Borrowed(value),
            requires_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(node);
        node
    }

    /// Row `row` of a 2-D parameter (embedding lookup).
    pub fn embedding(&mut self, table: ParamId, row: usize) -> NodeId {
        let t = self.params.get(table);
        assert!(row < t.rows(), "embedding row {row} out of {}", t.rows());
        let value = Tensor::vector(t.row(row).to_vec());
        self.push(Op::Row { param: table, row }, value, true)
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let mt = self.value(m);
        let (rows, cols) = (mt.rows(), mt.cols());
        assert_eq!(
            cols,
            self.value(x).len(),
            "matvec: matrix {:?} times vector of {}",
            mt.shape(),
            self.value(x).len()
        );
        let xs = self.data(x);
        let out: Vec<f64> = mt.data().chunks_exact(cols).map(|r| dot(r, xs)).collect();
        debug_assert_eq!(out.len(), rows);
        let rg = self.requires(m) || self.requires(x);
        self.push(Op::MatVec { m, x }, Tensor::vector(out), rg)
    }

    /// `m x + b`
    pub fn affine(&mut self, m: NodeId, x: NodeId, b: NodeId) -> NodeId {
        let mx = self.matvec(m, x);
        self.add(mx, b)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (av, bv) = (self.data(a), self.data(b));
        assert_eq!(av.len(), bv.len(), "{}: length mismatch", op.name());
        let out: Vec<f64> = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.requires(a) || self.requires(b);
        let shape = self.value(a).shape().to_vec();
        self.push(op, Tensor::new(shape, out).unwrap(), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let t = self.value(a);
        let out = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).unwrap();
        let rg = self.requires(a);
        self.push(Op::Scale(a, factor), value, rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, factors: Vec<f64>) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.len(), factors.len());
        let out = t.data().iter().zip(&factors).map(|(v, f)| v * f).collect();
        let value = Tensor::new(t.shape().to_vec(), out).unwrap();
        let rg = self.requires(a);
        self.push(Op::MulConst(a, factors), value, rg)
    }

    /// Inverted dropout; the identity when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: NodeId, rate: f64, rng: &mut R) -> NodeId {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.mul_const(a, mask)
    }

    pub fn add_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "add_n of nothing");
        let mut out = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            out.add_assign_slice(self.data(x));
        }
        let rg = xs.iter().any(|&x| self.requires(x));
        self.push(Op::AddN(xs.to_vec()), out, rg)
    }

    /// Elementwise mean of equally-shaped nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "mean of nothing");
        let mut out = self.value(xs[0]).clone();
        for &x in &xs[1..] {
            out.add_assign_slice(self.data(x));
        }
        let inv = 1.0 / xs.len() as f64;
        out.data_mut().iter_mut().for_each(|v| *v *= inv);
        let rg = xs.iter().any(|&x| self.requires(x));
        self.push(Op::Mean(xs.to_vec()), out, rg)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let t = self.value(a);
        let out = t.data().iter().map(|v| f(*v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).unwrap();
        let rg = self.requires(a);
        self.push(op, value, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for &x in xs {
            out.extend_from_slice(self.data(x));
        }
        let rg = xs.iter().any(|&x| self.requires(x));
        self.push(Op::Concat(xs.to_vec()), Tensor::vector(out), rg)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.data(x)[start..start + len].to_vec();
        let rg = self.requires(x);
        self.push(Op::Slice { x, start }, Tensor::vector(out), rg)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.data(a), self.data(b));
        assert_eq!(av.len(), bv.len(), "dot: length mismatch");
        let v = dot(av, bv);
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Dot(a, b), Tensor::scalar(v), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.data(a).iter().sum();
        let rg = self.requires(a);
        self.push(Op::Sum(a), Tensor::scalar(v), rg)
    }

    /// Softmax over the entries where `mask` is true; masked entries are exactly zero.
    pub fn softmax_masked(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let probs = masked_softmax(self.data(x), mask)?;
        let rg = self.requires(x);
        Ok(self.push(
            Op::SoftmaxMasked {
                x,
                mask: mask.to_vec(),
            },
            Tensor::vector(probs),
            rg,
        ))
    }

    /// `log softmax_masked(x)[target]` as a scalar node.
    pub fn log_prob_masked(&mut self, x: NodeId, mask: &[bool], target: usize) -> Result<NodeId> {
        let xs = self.data(x);
        if mask.len() != xs.len() {
            return Err(Error::Shape(format!(
                "mask of {} for {} logits",
                mask.len(),
                xs.len()
            )));
        }
        if target >= xs.len() || !mask[target] {
            return Err(Error::InvalidArgument(format!(
                "target {target} is masked or out of range"
            )));
        }
        let max = xs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = xs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| (v - max).exp())
            .sum::<f64>()
            .ln();
        let value = xs[target] - max - lse;
        let probs = xs
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m { (v - max - lse).exp() } else { 0.0 })
            .collect();
        let rg = self.requires(x);
        Ok(self.push(
            Op::LogProbMasked {
                x,
                mask: mask.to_vec(),
                target,
                probs,
            },
            Tensor::scalar(value),
            rg,
        ))
    }

    /// `x / (‖x‖ + NORMALIZE_EPS)`
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let norm = t.norm();
        let inv = 1.0 / (norm + NORMALIZE_EPS);
        let out = t.data().iter().map(|v| v * inv).collect();
        let rg = self.requires(x);
        self.push(Op::L2Normalize { x, norm }, Tensor::vector(out), rg)
    }

    /// Householder reflection carrying `e₁` to `mu`, applied to the constant `w`:
    /// `w - 2a(aᵀw)/(aᵀa)` with `a = e₁ - mu`.
    pub fn householder(&mut self, mu: NodeId, w: Vec<f64>) -> NodeId {
        let m = self.data(mu);
        assert_eq!(m.len(), w.len(), "householder: dimension mismatch");
        let a = reflector(m);
        let n = dot(&a, &a);
        let out = if n < HOUSEHOLDER_DEGENERATE {
            w.clone()
        } else {
            let s = dot(&a, &w);
            w.iter()
                .zip(&a)
                .map(|(wi, ai)| wi - 2.0 * ai * s / n)
                .collect()
        };
        let rg = self.requires(mu);
        self.push(Op::Householder { mu, w }, Tensor::vector(out), rg)
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.check_finite()?;

        let mut param_grads: Vec<Tensor> = self
            .params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => param_grads[pid.0].add_assign_slice(&g),
                Op::Row { param, row } => {
                    let t = &mut param_grads[param.0];
                    let cols = t.cols();
                    let dst = &mut t.data_mut()[row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::MatVec { m, x } => {
                    let mt = self.value(*m);
                    let cols = mt.cols();
                    let xs = self.data(*x);
                    if self.requires(*m) {
                        let gm = acc(&mut grads, *m, mt.len());
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                axpy(&mut gm[r * cols..(r + 1) * cols], *gr, xs);
                            }
                        }
                    }
                    if self.requires(*x) {
                        let gx = acc(&mut grads, *x, cols);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                axpy(gx, *gr, &mt.data()[r * cols..(r + 1) * cols]);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, 1.0);
                    self.acc_scaled(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc_scaled(&mut grads, *a, &g, 1.0);
                    self.acc_scaled(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    if self.requires(*a) {
                        let ga = acc(&mut grads, *a, g.len());
                        for ((d, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    if self.requires(*b) {
                        let gb = acc(&mut grads, *b, g.len());
                        for ((d, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::MulConst(a, f) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, gi), fi) in ga.iter_mut().zip(&g).zip(f) {
                        *d += gi * fi;
                    }
                }
                Op::Scale(a, f) => self.acc_scaled(&mut grads, *a, &g, *f),
                Op::AddN(xs) => {
                    for x in xs {
                        self.acc_scaled(&mut grads, *x, &g, 1.0);
                    }
                }
                Op::Mean(xs) => {
                    let inv = 1.0 / xs.len() as f64;
                    for x in xs {
                        self.acc_scaled(&mut grads, *x, &g, inv);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let n = self.value(*x).len();
                        if self.requires(*x) {
                            let gx = acc(&mut grads, *x, n);
                            for (d, gi) in gx.iter_mut().zip(&g[offset..offset + n]) {
                                *d += gi;
                            }
                        }
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for (d, gi) in gx[*start..*start + g.len()].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    if self.requires(*a) {
                        axpy(acc(&mut grads, *a, av.len()), g[0], bv);
                    }
                    if self.requires(*b) {
                        axpy(acc(&mut grads, *b, bv.len()), g[0], av);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let ga = acc(&mut grads, *a, n);
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SoftmaxMasked { x, mask } => {
                    let p = node.value.data();
                    let inner: f64 = p.iter().zip(&g).map(|(pi, gi)| pi * gi).sum();
                    let gx = acc(&mut grads, *x, p.len());
                    for (j, d) in gx.iter_mut().enumerate() {
                        if mask[j] {
                            *d += p[j] * (g[j] - inner);
                        }
                    }
                }
                Op::LogProbMasked {
                    x,
                    mask,
                    target,
                    probs,
                } => {
                    let gx = acc(&mut grads, *x, probs.len());
                    for (j, d) in gx.iter_mut().enumerate() {
                        if mask[j] {
                            let delta = if j == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (delta - probs[j]);
                        }
                    }
                }
                Op::L2Normalize { x, norm } => {
                    let xs = self.data(*x);
                    let s = norm + NORMALIZE_EPS;
                    let xg = dot(xs, &g);
                    let coef = if *norm > 0.0 {
                        xg / (norm * s * s)
                    } else {
                        0.0
                    };
                    let gx = acc(&mut grads, *x, xs.len());
                    for ((d, gi), xi) in gx.iter_mut().zip(&g).zip(xs) {
                        *d += gi / s - xi * coef;
                    }
                }
                Op::Householder { mu, w } => {
                    let a = reflector(self.data(*mu));
                    let n = dot(&a, &a);
                    if n >= HOUSEHOLDER_DEGENERATE {
                        let s = dot(&a, w);
                        let ag = dot(&a, &g);
                        let gmu = acc(&mut grads, *mu, a.len());
                        // d/dmu = -d/da
                        for j in 0..a.len() {
                            let ga = -2.0
                                * (s / n * g[j] + w[j] * ag / n - 2.0 * s * a[j] * ag / (n * n));
                            gmu[j] -= ga;
                        }
                    }
                }
            }
        }

        let grads = Gradients::from_tensors(param_grads);
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                op: "backward",
                node: loss.0,
            });
        }
        Ok(grads)
    }

    fn acc_scaled(&self, grads: &mut [Option<Vec<f64>>], x: NodeId, g: &[f64], f: f64) {
        if !self.requires(x) {
            return;
        }
        axpy(acc(grads, x, g.len()), f, g);
    }
}

/// Runs the reverse pass from `loss`; see [`Tape::backward`].
pub fn forward_backward(tape: &Tape<'_>, loss: NodeId) -> Result<Gradients> {
    tape.backward(loss)
}

/// Masked softmax on plain values.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if mask.len() != logits.len() {
        return Err(Error::Shape(format!(
            "mask of {} for {} logits",
            mask.len(),
            logits.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

const HOUSEHOLDER_DEGENERATE: f64 = 1e-30;

fn reflector(mu: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = mu.iter().map(|v| -v).collect();
    a[0] += 1.0;
    a
}

fn acc(grads: &mut [Option<Vec<f64>>], x: NodeId, len: usize) -> &mut Vec<f64> {
    grads[x.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = i * 4;
        s[0] += a[k] * b[k];
        s[1] += a[k + 1] * b[k + 1];
        s[2] += a[k + 2] * b[k + 2];
        s[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..n {
        tail += a[k] * b[k];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
