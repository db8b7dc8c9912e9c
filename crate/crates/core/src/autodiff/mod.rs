//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation in execution order. Node inputs always
//! refer to earlier nodes, so a single reverse sweep visits each node after
//! all of its consumers.

mod gradcheck;
pub(crate) mod kernels;

use std::fmt;
use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheck};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default negative slope of [`Tape::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations with a registered gradient rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    Softplus,
    Rsqrt,
    Square,
    Scale(f64),
}

/// A user-supplied differentiable operation.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Returns one gradient per input, each shaped like that input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>>;
}

#[derive(Clone)]
enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Unary(NodeId, Unary),
    Sum(NodeId),
    Mean(NodeId),
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    Reshape(NodeId),
    Demodulate {
        kernel: NodeId,
        scales: NodeId,
        eps: f64,
    },
    ChannelBias(NodeId, NodeId),
    Upsample2x(NodeId),
    Downsample2x(NodeId),
    Custom(Arc<dyn CustomOp<T>>, Vec<NodeId>),
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::ChannelBias(a, b) => vec![*a, *b],
            Op::Unary(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::Upsample2x(a)
            | Op::Downsample2x(a) => vec![*a],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::Demodulate { kernel, scales, .. } => vec![*kernel, *scales],
            Op::Custom(_, ins) => ins.clone(),
        }
    }

    fn name(&self) -> String {
        match self {
            Op::Leaf => "leaf".into(),
            Op::Add(..) => "add".into(),
            Op::Sub(..) => "sub".into(),
            Op::Mul(..) => "mul".into(),
            Op::Unary(_, u) => format!("{u:?}"),
            Op::Sum(_) => "sum".into(),
            Op::Mean(_) => "mean".into(),
            Op::MatMul(..) => "matmul".into(),
            Op::Conv2d { .. } => "conv2d".into(),
            Op::Reshape(_) => "reshape".into(),
            Op::Demodulate { .. } => "demodulate".into(),
            Op::ChannelBias(..) => "channel_bias".into(),
            Op::Upsample2x(_) => "upsample2x".into(),
            Op::Downsample2x(_) => "downsample2x".into(),
            Op::Custom(c, _) => c.name().to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Constant,
    Param,
    Computed,
}

#[derive(Clone)]
struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    role: Role,
    requires_grad: bool,
}

/// Operation record for one forward pass.
///
/// A tape has a single writer; build one per independent forward pass.
#[derive(Clone, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<NodeId>,
    /// Smallest |input| seen by any leaky_relu, used to detect kinks.
    min_kink_distance: Option<f64>,
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("params", &self.params.len())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            min_kink_distance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient from [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        let id = self.push(Op::Leaf, value, Role::Param, true);
        self.params.push(id);
        id
    }

    /// A leaf treated as fixed data; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value, Role::Constant, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Parameter leaves in registration order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    /// Replaces the value of a leaf. Call [`Tape::replay`] to refresh dependents.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if node.role == Role::Computed {
            return Err(Error::Contract(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return shape_err(format!(
                "leaf {} has shape {:?}, got {:?}",
                id.0,
                node.value.shape(),
                value.shape()
            ));
        }
        node.value = value;
        Ok(())
    }

    /// Smallest absolute leaky_relu input recorded so far.
    pub fn min_kink_distance(&self) -> Option<f64> {
        self.min_kink_distance
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, role: Role, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            role,
            requires_grad,
        });
        id
    }

    fn record(&mut self, op: Op<T>) -> Result<NodeId> {
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::Contract(format!("unknown node {}", bad.0)));
        }
        let value = self.eval(&op)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, value, Role::Computed, requires_grad))
    }

    fn eval(&mut self, op: &Op<T>) -> Result<Tensor<T>> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let out = match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y)?,
            Op::Sub(a, b) => v(a).zip_map(v(b), |x, y| x - y)?,
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y)?,
            Op::Unary(a, u) => {
                let x = v(a);
                match *u {
                    Unary::LeakyRelu(alpha) => {
                        let alpha = T::lit(alpha);
                        let near = x
                            .data()
                            .iter()
                            .map(|z| z.abs().as_f64())
                            .fold(f64::INFINITY, f64::min);
                        let out = x.map(|z| if z >= T::zero() { z } else { alpha * z });
                        self.min_kink_distance =
                            Some(self.min_kink_distance.map_or(near, |m| m.min(near)));
                        out
                    }
                    Unary::Softplus => x.map(kernels::softplus),
                    Unary::Rsqrt => {
                        if x.data().iter().any(|&z| z <= T::zero()) {
                            return Err(Error::Numeric("rsqrt of a non-positive value".into()));
                        }
                        x.map(|z| z.sqrt().recip())
                    }
                    Unary::Square => x.map(|z| z * z),
                    Unary::Scale(c) => {
                        let c = T::lit(c);
                        x.map(|z| z * c)
                    }
                }
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Mean(a) => {
                let x = v(a);
                Tensor::scalar(x.sum() / T::lit(x.numel() as f64))
            }
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => v(input).conv2d(v(kernel), *stride, *pad)?,
            Op::Reshape(_) => unreachable!("reshape evaluated by caller"),
            Op::Demodulate {
                kernel,
                scales,
                eps,
            } => kernels::demodulate(v(kernel), v(scales), T::lit(*eps))?,
            Op::ChannelBias(x, b) => v(x).add_channel_bias(v(b))?,
            Op::Upsample2x(a) => v(a).upsample2x()?,
            Op::Downsample2x(a) => v(a).downsample2x()?,
            Op::Custom(c, ins) => {
                let vals: Vec<&Tensor<T>> = ins.iter().map(v).collect();
                let out = c.forward(&vals)?;
                if !out.all_finite() {
                    return Err(Error::Numeric(format!("{} produced non-finite output", c.name())));
                }
                out
            }
        };
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::Unary(a, Unary::Scale(c)))
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> Result<NodeId> {
        self.record(Op::Unary(a, Unary::LeakyRelu(alpha)))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Unary(a, Unary::Softplus))
    }

    pub fn rsqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Unary(a, Unary::Rsqrt))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Unary(a, Unary::Square))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        self.record(Op::Conv2d {
            input,
            kernel,
            stride,
            pad,
        })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape)?;
        let requires_grad = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::Reshape(a), value, Role::Computed, requires_grad))
    }

    /// Style modulation followed by per-output-channel demodulation of a
    /// F×C×kh×kw kernel; see [`crate::model::demodulate_weights`].
    pub fn demodulate(&mut self, kernel: NodeId, scales: NodeId, eps: f64) -> Result<NodeId> {
        self.record(Op::Demodulate {
            kernel,
            scales,
            eps,
        })
    }

    pub fn channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Op::ChannelBias(x, bias))
    }

    pub fn upsample2x(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Upsample2x(a))
    }

    pub fn downsample2x(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Downsample2x(a))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        self.record(Op::Custom(op, inputs.to_vec()))
    }

    /// Dispatches a pointwise or reduction op by name.
    ///
    /// Accepted names: `add`, `sub`, `mul`, `scale(c)`, `leaky_relu` or
    /// `leaky_relu(alpha)`, `softplus`, `sum`, `mean`, `rsqrt`, `square`.
    pub fn elementwise(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let (base, arg) = match name.split_once('(') {
            Some((b, rest)) => {
                let arg = rest
                    .strip_suffix(')')
                    .and_then(|a| a.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Contract(format!("malformed op argument in {name:?}")))?;
                (b.trim(), Some(arg))
            }
            None => (name.trim(), None),
        };
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Contract(format!(
                    "{base} takes {n} input(s), got {}",
                    inputs.len()
                )))
            }
        };
        match (base, arg) {
            ("add", None) => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            ("sub", None) => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            ("mul", None) => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            ("scale", Some(c)) => arity(1).and_then(|_| self.scale(inputs[0], c)),
            ("leaky_relu", a) => {
                arity(1).and_then(|_| self.leaky_relu(inputs[0], a.unwrap_or(LEAKY_RELU_SLOPE)))
            }
            ("softplus", None) => arity(1).and_then(|_| self.softplus(inputs[0])),
            ("sum", None) => arity(1).and_then(|_| self.sum(inputs[0])),
            ("mean", None) => arity(1).and_then(|_| self.mean(inputs[0])),
            ("rsqrt", None) => arity(1).and_then(|_| self.rsqrt(inputs[0])),
            ("square", None) => arity(1).and_then(|_| self.square(inputs[0])),
            _ => Err(Error::Contract(format!("unknown elementwise op {name:?}"))),
        }
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        self.min_kink_distance = None;
        for i in 0..self.nodes.len() {
            if self.nodes[i].role != Role::Computed {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = match op {
                Op::Reshape(a) => self.nodes[a.0]
                    .value
                    .reshape(self.nodes[i].value.shape())?,
                ref other => self.eval(other)?,
            };
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || node.role != Role::Computed {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let inputs = node.op.inputs();
            let input_grads = self.input_grads(node, &g)?;
            debug_assert_eq!(inputs.len(), input_grads.len());
            for (inp, ig) in inputs.into_iter().zip(input_grads) {
                let target = &self.nodes[inp.0];
                if !target.requires_grad {
                    continue;
                }
                let Some(ig) = ig else { continue };
                if ig.shape() != target.value.shape() {
                    return Err(Error::Shape(format!(
                        "gradient rule for {} returned shape {:?} for input of shape {:?}",
                        node.op.name(),
                        ig.shape(),
                        target.value.shape()
                    )));
                }
                accumulate(&mut grads[inp.0], ig)?;
            }
            // keep param gradients only; intermediate ones are dropped above
        }

        let params = self
            .params
            .iter()
            .map(|&p| {
                let g = if p.0 < grads.len() {
                    grads[p.0].take()
                } else {
                    None
                };
                g.unwrap_or_else(|| Tensor::zeros(self.value(p).shape()))
            })
            .collect();
        Ok(Gradients {
            ids: self.params.clone(),
            grads: params,
        })
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                Some(kernels::unbroadcast(g, val(*a))),
                Some(kernels::unbroadcast(g, val(*b))),
            ],
            Op::Sub(a, b) => vec![
                Some(kernels::unbroadcast(g, val(*a))),
                Some(kernels::unbroadcast(&g.map(|x| -x), val(*b))),
            ],
            Op::Mul(a, b) => {
                let ga = needs(*a)
                    .then(|| g.zip_map(val(*b), |x, y| x * y))
                    .transpose()?
                    .map(|t| kernels::unbroadcast(&t, val(*a)));
                let gb = needs(*b)
                    .then(|| g.zip_map(val(*a), |x, y| x * y))
                    .transpose()?
                    .map(|t| kernels::unbroadcast(&t, val(*b)));
                vec![ga, gb]
            }
            Op::Unary(a, u) => {
                let x = val(*a);
                let d = match *u {
                    Unary::LeakyRelu(alpha) => {
                        let alpha = T::lit(alpha);
                        x.zip_map(g, |z, gz| if z >= T::zero() { gz } else { alpha * gz })?
                    }
                    Unary::Softplus => x.zip_map(g, |z, gz| kernels::sigmoid(z) * gz)?,
                    Unary::Rsqrt => {
                        let half = T::lit(-0.5);
                        node.value
                            .zip_map(x, |r, z| half * r / z)?
                            .zip_map(g, |d, gz| d * gz)?
                    }
                    Unary::Square => x.zip_map(g, |z, gz| (z + z) * gz)?,
                    Unary::Scale(c) => {
                        let c = T::lit(c);
                        g.map(|gz| gz * c)
                    }
                };
                vec![Some(d)]
            }
            Op::Sum(a) => vec![Some(Tensor::full(val(*a).shape(), g.item()?))],
            Op::Mean(a) => {
                let x = val(*a);
                let v = g.item()? / T::lit(x.numel() as f64);
                vec![Some(Tensor::full(x.shape(), v))]
            }
            Op::MatMul(a, b) => {
                let ga = needs(*a)
                    .then(|| g.matmul(&val(*b).transpose()?))
                    .transpose()?;
                let gb = needs(*b)
                    .then(|| val(*a).transpose()?.matmul(g))
                    .transpose()?;
                vec![ga, gb]
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (gx, gw) = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    g,
                    *stride,
                    *pad,
                    needs(*input),
                    needs(*kernel),
                )?;
                vec![gx, gw]
            }
            Op::Reshape(a) => vec![Some(g.reshape(val(*a).shape())?)],
            Op::Demodulate {
                kernel,
                scales,
                eps,
            } => {
                let (gk, gs) =
                    kernels::demodulate_backward(val(*kernel), val(*scales), T::lit(*eps), g)?;
                vec![Some(gk), Some(gs)]
            }
            Op::ChannelBias(_, b) => {
                let gb = kernels::channel_bias_backward(g, val(*b).shape())?;
                vec![Some(g.clone()), Some(gb)]
            }
            Op::Upsample2x(_) => vec![Some(kernels::upsample2x_backward(g)?)],
            Op::Downsample2x(_) => vec![Some(g.upsample2x()?.map(|z| z * T::lit(0.25)))],
            Op::Custom(c, ins) => {
                let vals: Vec<&Tensor<T>> = ins.iter().map(|i| val(*i)).collect();
                c.backward(&vals, &node.value, g)?
                    .into_iter()
                    .map(Some)
                    .collect()
            }
        };
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
    Ok(())
}

/// Gradients of a scalar loss, one per parameter leaf, shaped like the leaf.
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    ids: Vec<NodeId>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.ids
            .iter()
            .position(|&p| p == id)
            .map(|i| &self.grads[i])
    }

    /// Gradients in parameter registration order.
    pub fn as_slice(&self) -> &[Tensor<T>] {
        &self.grads
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}
