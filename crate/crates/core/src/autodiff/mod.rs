//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly when
//! its node is created, so creation order is a topological order. After
//! changing leaf values with [`Graph::set_value`], [`Graph::forward`]
//! re-evaluates the whole tape.
//!
//! Only the operators needed by the unrolled reconstructor and its losses are
//! provided; there is no general broadcasting.

mod conv;

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::kspace;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    /// tensor times a learned one-element node
    MulScalar(NodeId, NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    SoftThreshold(NodeId, NodeId),
    Conv2d(NodeId, NodeId, NodeId),
    Fft2c(NodeId),
    Ifft2c(NodeId),
    /// elementwise product with a constant 0/1 pattern, broadcast over the
    /// leading channel axis if the pattern has one fewer dimension
    Mask(NodeId, Rc<Tensor>),
    MaskedMse(NodeId, NodeId, Rc<Tensor>),
    Sum(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MulScalar(a, b) | SoftThreshold(a, b) => vec![a, b],
            MaskedMse(a, b, _) => vec![a, b],
            Scale(a, _) | Relu(a) | Softplus(a) | Fft2c(a) | Ifft2c(a) | Sum(a) | Mask(a, _) => vec![a],
            Conv2d(x, k, b) => vec![x, k, b],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Scale(..) => "scale",
            Mul(..) => "mul",
            MulScalar(..) => "mul_scalar",
            Relu(..) => "relu",
            Softplus(..) => "softplus",
            SoftThreshold(..) => "soft_threshold",
            Conv2d(..) => "conv2d",
            Fft2c(..) => "fft2c",
            Ifft2c(..) => "ifft2c",
            Mask(..) => "mask",
            MaskedMse(..) => "masked_mse",
            Sum(..) => "sum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

fn softplus(v: f64) -> f64 {
    // log(1 + e^v) without overflow
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn soft(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// Checks a mask against `like`; returns how many entries of `like` it selects.
fn mask_selects(op: &'static str, like: &Tensor, mask: &Tensor) -> Result<usize> {
    let repeat = if mask.shape() == like.shape() {
        1
    } else if like.shape().len() == mask.shape().len() + 1 && &like.shape()[1..] == mask.shape() {
        like.shape()[0]
    } else {
        return Err(Error::shape(
            op,
            format!("mask {:?} does not match operand {:?}", mask.shape(), like.shape()),
        ));
    };
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::contract(op, "mask must be binary"));
    }
    Ok(repeat * mask.count_nonzero())
}

fn apply_mask(t: &Tensor, mask: &Tensor) -> Tensor {
    let mut out = t.clone();
    for chunk in out.data_mut().chunks_mut(mask.len()) {
        for (v, &m) in chunk.iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    out
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

    /// Ids of every leaf (parameter, input or constant) in creation order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` root w.r.t. `id`; `None` before any
    /// backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let id = self.push_raw(Op::Leaf, value, true);
        self.leaves.push(id);
        id
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.push_raw(Op::Leaf, value, false);
        self.leaves.push(id);
        id
    }

    /// Replaces a leaf's value. Call [`Graph::forward`] afterwards.
    pub fn set_value(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::contract("set_value", "only leaves can be assigned"));
        }
        node.value.expect_same_shape(&value, "set_value")?;
        node.value = value;
        Ok(())
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_raw(op, value, requires_grad))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => v(a).add(v(b))?,
            Op::Sub(a, b) => v(a).sub(v(b))?,
            Op::Scale(a, c) => v(a).scale(*c),
            Op::Mul(a, b) => v(a).zip_map(v(b), "mul", |x, y| x * y)?,
            Op::MulScalar(a, s) => {
                let s = v(s);
                if !s.is_scalar() {
                    return Err(Error::shape("mul_scalar", format!("factor must be scalar, got {:?}", s.shape())));
                }
                v(a).scale(s.item())
            }
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::Softplus(a) => v(a).map(softplus),
            Op::SoftThreshold(x, t) => {
                let t = v(t);
                if !t.is_scalar() {
                    return Err(Error::shape(
                        "soft_threshold",
                        format!("threshold must be scalar, got {:?}", t.shape()),
                    ));
                }
                let theta = t.item();
                if theta.is_nan() || theta < 0.0 {
                    return Err(Error::contract("soft_threshold", format!("threshold {theta} is negative")));
                }
                v(x).map(|e| soft(e, theta))
            }
            Op::Conv2d(x, k, b) => conv::forward(v(x), v(k), v(b))?,
            Op::Fft2c(a) => kspace::fft2_centered(v(a))?,
            Op::Ifft2c(a) => kspace::ifft2_centered(v(a))?,
            Op::Mask(a, m) => {
                mask_selects("mask", v(a), m)?;
                apply_mask(v(a), m)
            }
            Op::MaskedMse(a, b, m) => {
                let (a, b) = (v(a), v(b));
                a.expect_same_shape(b, "masked_mse")?;
                let n = mask_selects("masked_mse", a, m)?;
                if n == 0 {
                    log::warn!("masked_mse: mask selects no entries, loss is 0");
                    Tensor::scalar(0.0)
                } else {
                    let mut acc = 0.0;
                    for (chunk_a, chunk_b) in a.data().chunks(m.len()).zip(b.data().chunks(m.len())) {
                        for ((x, y), &w) in chunk_a.iter().zip(chunk_b).zip(m.data()) {
                            let d = x - y;
                            acc += w * d * d;
                        }
                    }
                    Tensor::scalar(acc / n as f64)
                }
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    /// `s · a` for a one-element node `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.push(Op::MulScalar(a, s))
    }

    /// `max(a, 0)`; derivative at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus(a))
    }

    /// `sign(x)·max(|x| − θ, 0)` with a scalar threshold node `theta ≥ 0`.
    /// The subgradient at `|x| = θ` is taken as 0.
    pub fn soft_threshold(&mut self, x: NodeId, theta: NodeId) -> Result<NodeId> {
        self.push(Op::SoftThreshold(x, theta))
    }

    /// Zero-padded ("same") cross-correlation of a `Cin×H×W` input with a
    /// `Cout×Cin×k×k` kernel (k odd) plus a per-channel bias.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::Conv2d(x, kernel, bias))
    }

    pub fn fft2c(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Fft2c(a))
    }

    pub fn ifft2c(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Ifft2c(a))
    }

    pub fn mask(&mut self, a: NodeId, pattern: Rc<Tensor>) -> Result<NodeId> {
        self.push(Op::Mask(a, pattern))
    }

    /// `sum(m·(a−b)²) / count(selected entries)`. The mask is either the
    /// operands' shape or their shape without the leading channel axis.
    /// An empty mask gives 0 and logs a warning.
    pub fn masked_mse(&mut self, a: NodeId, b: NodeId, mask: Rc<Tensor>) -> Result<NodeId> {
        self.push(Op::MaskedMse(a, b, mask))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    /// Re-evaluates every non-leaf node in creation order.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = self.eval(&op)?;
        }
        Ok(())
    }

    /// Accumulates `∂root/∂node` into every node. Nodes the root does not
    /// depend on end up with zero gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.nodes[root.0].value.shape()),
            ));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::ones(self.nodes[root.0].value.shape()));

        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                let op = self.nodes[i].op.clone();
                self.propagate(&op, &g)?;
            }
            self.nodes[i].grad = Some(g);
        }

        for n in &mut self.nodes {
            if n.grad.is_none() {
                n.grad = Some(Tensor::zeros(n.value.shape()));
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return Ok(());
        }
        match node.grad.as_mut() {
            Some(acc) => acc.axpy(1.0, &g)?,
            None => node.grad = Some(g),
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op, g: &Tensor) -> Result<()> {
        let val = |s: &Self, id: &NodeId| s.nodes[id.0].value.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone())?;
                self.accumulate(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone())?;
                self.accumulate(*b, g.scale(-1.0))?;
            }
            Op::Scale(a, c) => self.accumulate(*a, g.scale(*c))?,
            Op::Mul(a, b) => {
                let (va, vb) = (val(self, a), val(self, b));
                self.accumulate(*a, g.zip_map(&vb, "mul", |x, y| x * y)?)?;
                self.accumulate(*b, g.zip_map(&va, "mul", |x, y| x * y)?)?;
            }
            Op::MulScalar(a, s) => {
                let va = val(self, a);
                let vs = self.nodes[s.0].value.item();
                self.accumulate(*a, g.scale(vs))?;
                self.accumulate(*s, Tensor::scalar(g.dot(&va)?))?;
            }
            Op::Relu(a) => {
                let va = val(self, a);
                self.accumulate(*a, g.zip_map(&va, "relu", |gi, x| if x > 0.0 { gi } else { 0.0 })?)?;
            }
            Op::Softplus(a) => {
                let va = val(self, a);
                self.accumulate(*a, g.zip_map(&va, "softplus", |gi, x| gi * sigmoid(x))?)?;
            }
            Op::SoftThreshold(x, t) => {
                let vx = val(self, x);
                let theta = self.nodes[t.0].value.item();
                let gx = g.zip_map(&vx, "soft_threshold", |gi, e| if e.abs() > theta { gi } else { 0.0 })?;
                let gt: f64 = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .filter(|(_, e)| e.abs() > theta)
                    .map(|(gi, e)| -gi * e.signum())
                    .sum();
                self.accumulate(*x, gx)?;
                self.accumulate(*t, Tensor::scalar(gt))?;
            }
            Op::Conv2d(x, k, b) => {
                let want_input = self.nodes[x.0].requires_grad;
                let (gx, gk, gb) = conv::backward(
                    &self.nodes[x.0].value,
                    &self.nodes[k.0].value,
                    &self.nodes[b.0].value,
                    g,
                    want_input,
                )?;
                if let Some(gx) = gx {
                    self.accumulate(*x, gx)?;
                }
                self.accumulate(*k, gk)?;
                self.accumulate(*b, gb)?;
            }
            // The centered transform is unitary, so its adjoint is its inverse.
            Op::Fft2c(a) => self.accumulate(*a, kspace::ifft2_centered(g)?)?,
            Op::Ifft2c(a) => self.accumulate(*a, kspace::fft2_centered(g)?)?,
            Op::Mask(a, m) => self.accumulate(*a, apply_mask(g, m))?,
            Op::MaskedMse(a, b, m) => {
                let (va, vb) = (val(self, a), val(self, b));
                let n = mask_selects("masked_mse", &va, m)?;
                if n == 0 {
                    return Ok(());
                }
                let c = 2.0 * g.item() / n as f64;
                let diff = apply_mask(&va.sub(&vb)?, m).scale(c);
                self.accumulate(*b, diff.scale(-1.0))?;
                self.accumulate(*a, diff)?;
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                self.accumulate(*a, Tensor::full(&shape, g.item()))?;
            }
        }
        Ok(())
    }

    /// Operator name of a node, for diagnostics.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}
