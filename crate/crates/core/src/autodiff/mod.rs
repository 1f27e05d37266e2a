//! Minimal reverse-mode differentiation over the tensor operations the
//! stereo pipeline needs.
//!
//! A [`Tape`] is an append-only list of nodes. Every node stores its forward
//! value and the operation that produced it; parents always precede their
//! children, so [`Tape::backward`] simply walks the list in reverse. All
//! reductions and gradient accumulations run in a fixed index order, which
//! makes repeated runs bit-identical.
//!
//! Tensors whose first axis is the disparity-bin axis (`[bins, ...]`) are
//! reduced along that axis by the `*_bins` operations and by
//! [`Tape::softmax`].

mod check;
pub mod dd;
pub mod probe;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

pub use check::{central_difference, central_difference_dd, finite_diff_check, relative_error};

use crate::costvolume::ResamplePlan;
use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Trainable weights with a name. The gradient buffer always matches the
/// value buffer in length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Parameter {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.value.len(), 0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, for diagnostics and exhaustive testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Abs,
    Log,
    Sqrt,
    Recip,
    SmoothL1,
    Sum,
    MeanAbs,
    SumBins,
    DotBins,
    NormBins,
    Softmax,
    WeightedIndexSum,
    Conv2d,
    Resample,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Abs(NodeId),
    Log(NodeId, f64),
    Sqrt(NodeId),
    Recip(NodeId),
    SmoothL1(NodeId),
    Sum(NodeId),
    MeanAbs(NodeId),
    SumBins(NodeId),
    DotBins(NodeId, NodeId),
    NormBins(NodeId),
    Softmax(NodeId),
    WeightedIndexSum(NodeId, Rc<[f64]>),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        dilation: usize,
    },
    Resample(NodeId, Rc<ResamplePlan>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Abs(_) => OpKind::Abs,
            Op::Log(..) => OpKind::Log,
            Op::Sqrt(_) => OpKind::Sqrt,
            Op::Recip(_) => OpKind::Recip,
            Op::SmoothL1(_) => OpKind::SmoothL1,
            Op::Sum(_) => OpKind::Sum,
            Op::MeanAbs(_) => OpKind::MeanAbs,
            Op::SumBins(_) => OpKind::SumBins,
            Op::DotBins(..) => OpKind::DotBins,
            Op::NormBins(_) => OpKind::NormBins,
            Op::Softmax(_) => OpKind::Softmax,
            Op::WeightedIndexSum(..) => OpKind::WeightedIndexSum,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Resample(..) => OpKind::Resample,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn split_bins(shape: &[usize]) -> (usize, usize, Vec<usize>) {
    assert!(!shape.is_empty(), "bin reductions need at least one axis");
    let bins = shape[0];
    let rest: Vec<usize> = shape[1..].to_vec();
    let n = rest.iter().product();
    (bins, n, rest)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t, true)
    }

    pub fn param(&mut self, p: &Parameter) -> NodeId {
        self.variable(Tensor::new(p.shape.clone(), p.value.clone()))
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "{what}: operand shapes differ"
        );
    }

    fn map(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(x);
        let out = Tensor::new(v.shape.clone(), v.data.iter().map(|a| f(*a)).collect());
        let ng = self.needs(x);
        self.push(op, out, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "add");
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), t, ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "sub");
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), t, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "mul");
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape.clone(), data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), t, ng)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, Op::Scale(x, c), |a| a * c)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Abs(x), f64::abs)
    }

    /// `ln(max(x, floor))`.
    pub fn log(&mut self, x: NodeId, floor: f64) -> NodeId {
        self.map(x, Op::Log(x, floor), |a| a.max(floor).ln())
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Recip(x), |a| 1.0 / a)
    }

    /// Elementwise smooth-L1 (Huber with unit threshold).
    pub fn smooth_l1(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::SmoothL1(x), |a| {
            if a.abs() < 1.0 {
                0.5 * a * a
            } else {
                a.abs() - 0.5
            }
        })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data.iter().sum();
        let ng = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    /// Mean of absolute values over all entries.
    pub fn mean_abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data.iter().map(|a| a.abs()).sum::<f64>() / v.numel() as f64;
        let ng = self.needs(x);
        self.push(Op::MeanAbs(x), Tensor::scalar(s), ng)
    }

    fn reduce_bins(&mut self, x: NodeId, op: Op, weights: Option<&[f64]>) -> NodeId {
        let v = self.value(x);
        let (bins, n, rest) = split_bins(&v.shape);
        if let Some(w) = weights {
            assert_eq!(w.len(), bins, "weight vector length must equal the bin count");
        }
        let mut out = vec![0.0; n];
        for d in 0..bins {
            let w = weights.map_or(1.0, |w| w[d]);
            let row = &v.data[d * n..(d + 1) * n];
            for (o, a) in out.iter_mut().zip(row) {
                *o += w * a;
            }
        }
        let ng = self.needs(x);
        self.push(op, Tensor::new(rest, out), ng)
    }

    /// Sum along the bin axis: `[bins, ...] -> [...]`.
    pub fn sum_bins(&mut self, x: NodeId) -> NodeId {
        self.reduce_bins(x, Op::SumBins(x), None)
    }

    /// `out[n] = sum_d weights[d] * x[d, n]`; with the bin values as weights
    /// this is the soft-argmax readout.
    pub fn weighted_index_sum(&mut self, x: NodeId, weights: &[f64]) -> NodeId {
        let w: Rc<[f64]> = weights.into();
        self.reduce_bins(x, Op::WeightedIndexSum(x, w.clone()), Some(&w))
    }

    pub fn dot_bins(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, "dot_bins");
        let (va, vb) = (self.value(a), self.value(b));
        let (bins, n, rest) = split_bins(&va.shape);
        let mut out = vec![0.0; n];
        for d in 0..bins {
            for (k, o) in out.iter_mut().enumerate() {
                *o += va.data[d * n + k] * vb.data[d * n + k];
            }
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::DotBins(a, b), Tensor::new(rest, out), ng)
    }

    pub fn norm_bins(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (bins, n, rest) = split_bins(&v.shape);
        let mut out = vec![0.0; n];
        for d in 0..bins {
            for (k, o) in out.iter_mut().enumerate() {
                let a = v.data[d * n + k];
                *o += a * a;
            }
        }
        for o in out.iter_mut() {
            *o = o.sqrt();
        }
        let ng = self.needs(x);
        self.push(Op::NormBins(x), Tensor::new(rest, out), ng)
    }

    /// Max-subtracted softmax along the bin axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (bins, n, _) = split_bins(&v.shape);
        let mut out = vec![0.0; v.numel()];
        for k in 0..n {
            let mut top = f64::NEG_INFINITY;
            for d in 0..bins {
                top = top.max(v.data[d * n + k]);
            }
            let mut total = 0.0;
            for d in 0..bins {
                let e = (v.data[d * n + k] - top).exp();
                out[d * n + k] = e;
                total += e;
            }
            for d in 0..bins {
                out[d * n + k] /= total;
            }
        }
        let t = Tensor::new(v.shape.clone(), out);
        let ng = self.needs(x);
        self.push(Op::Softmax(x), t, ng)
    }

    /// 3x3 convolution, stride 1, zero padding 1. `input` is
    /// `[c_in, h, w]`, `weight` is `[c_out, c_in, 3, 3]`, `bias` is `[c_out]`.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> NodeId {
        self.conv2d_dilated(input, weight, bias, 1)
    }

    /// [`Tape::conv2d`] with taps `dilation` pixels apart and zero padding
    /// `dilation`, so the output keeps the input size.
    pub fn conv2d_dilated(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, dilation: usize) -> NodeId {
        assert!(dilation >= 1, "conv2d dilation must be at least 1");
        let x = self.value(input);
        let w = self.value(weight);
        assert_eq!(x.shape.len(), 3, "conv2d input must be [c, h, w]");
        assert_eq!(w.shape.len(), 4, "conv2d weight must be [c_out, c_in, 3, 3]");
        let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
        let cout = w.shape[0];
        assert_eq!(w.shape[1..], [cin, 3, 3], "conv2d weight shape mismatch");
        let mut out = vec![0.0; cout * h * wd];
        if let Some(b) = bias {
            let bv = self.value(b);
            assert_eq!(bv.shape, vec![cout], "conv2d bias shape mismatch");
            for co in 0..cout {
                out[co * h * wd..(co + 1) * h * wd].fill(bv.data[co]);
            }
        }
        for co in 0..cout {
            let dst = &mut out[co * h * wd..(co + 1) * h * wd];
            for ci in 0..cin {
                let src = &x.data[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = w.data[((co * cin + ci) * 3 + ky) * 3 + kx];
                        conv_tap(dst, src, h, wd, ky, kx, dilation, wv);
                    }
                }
            }
        }
        let ng = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            },
            Tensor::new(vec![cout, h, wd], out),
            ng,
        )
    }

    /// Applies a separable interpolation plan to a `[bins, h, w]` tensor.
    pub fn resample(&mut self, x: NodeId, plan: Rc<ResamplePlan>) -> NodeId {
        let v = self.value(x);
        let (d0, h0, w0) = plan.in_dims();
        assert_eq!(v.shape, vec![d0, h0, w0], "resample input shape mismatch");
        let (d1, h1, w1) = plan.out_dims();
        let t = Tensor::new(vec![d1, h1, w1], plan.forward(&v.data));
        let ng = self.needs(x);
        self.push(Op::Resample(x, plan), t, ng)
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::invalid(format!("node {} is not on this tape", root.0)))?;
        if root_value.value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, node {} has shape {:?}",
                root.0, root_value.value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
            f(slot);
        };
        let out = &node.value.data;
        match &node.op {
            Op::Input => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let va = &self.value(*a).data;
                let vb = &self.value(*b).data;
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::Relu(x) => {
                let v = &self.value(*x).data;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        if v[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let v = &self.value(*x).data;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * sign(v[k]);
                    }
                });
            }
            Op::Log(x, floor) => {
                let v = &self.value(*x).data;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        if v[k] > *floor {
                            s[k] += g[k] / v[k];
                        }
                    }
                });
            }
            Op::Sqrt(x) => acc(*x, &mut |s| {
                for k in 0..s.len() {
                    s[k] += g[k] * 0.5 / out[k];
                }
            }),
            Op::Recip(x) => acc(*x, &mut |s| {
                for k in 0..s.len() {
                    s[k] -= g[k] * out[k] * out[k];
                }
            }),
            Op::SmoothL1(x) => {
                let v = &self.value(*x).data;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        let d = if v[k].abs() < 1.0 { v[k] } else { sign(v[k]) };
                        s[k] += g[k] * d;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::MeanAbs(x) => {
                let v = &self.value(*x).data;
                let scale = g[0] / v.len() as f64;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += scale * sign(v[k]);
                    }
                });
            }
            Op::SumBins(x) => {
                let n = g.len();
                acc(*x, &mut |s| {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += g[k % n];
                    }
                });
            }
            Op::WeightedIndexSum(x, w) => {
                let n = g.len();
                acc(*x, &mut |s| {
                    for (k, sk) in s.iter_mut().enumerate() {
                        *sk += w[k / n] * g[k % n];
                    }
                });
            }
            Op::DotBins(a, b) => {
                let n = g.len();
                let va = &self.value(*a).data;
                let vb = &self.value(*b).data;
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k % n] * vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k % n] * va[k];
                    }
                });
            }
            Op::NormBins(x) => {
                let n = g.len();
                let v = &self.value(*x).data;
                acc(*x, &mut |s| {
                    for k in 0..s.len() {
                        let norm = out[k % n];
                        if norm > 0.0 {
                            s[k] += g[k % n] * v[k] / norm;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (bins, n, _) = split_bins(&node.value.shape);
                let mut dots = vec![0.0; n];
                for d in 0..bins {
                    for (k, dot) in dots.iter_mut().enumerate() {
                        *dot += out[d * n + k] * g[d * n + k];
                    }
                }
                acc(*x, &mut |s| {
                    for d in 0..bins {
                        for (k, dot) in dots.iter().enumerate() {
                            let idx = d * n + k;
                            s[idx] += out[idx] * (g[idx] - dot);
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                dilation,
            } => {
                let dilation = *dilation;
                let x = self.value(*input);
                let w = self.value(*weight);
                let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
                let cout = w.shape[0];
                let plane = h * wd;
                if let Some(b) = bias {
                    acc(*b, &mut |s| {
                        for co in 0..cout {
                            s[co] += g[co * plane..(co + 1) * plane].iter().sum::<f64>();
                        }
                    });
                }
                acc(*weight, &mut |s| {
                    for co in 0..cout {
                        let gp = &g[co * plane..(co + 1) * plane];
                        for ci in 0..cin {
                            let src = &x.data[ci * plane..(ci + 1) * plane];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    s[((co * cin + ci) * 3 + ky) * 3 + kx] +=
                                        conv_tap_dot(gp, src, h, wd, ky, kx, dilation);
                                }
                            }
                        }
                    }
                });
                acc(*input, &mut |s| {
                    for co in 0..cout {
                        let gp = &g[co * plane..(co + 1) * plane];
                        for ci in 0..cin {
                            let dst = &mut s[ci * plane..(ci + 1) * plane];
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let wv = w.data[((co * cin + ci) * 3 + ky) * 3 + kx];
                                    conv_tap_transpose(dst, gp, h, wd, ky, kx, dilation, wv);
                                }
                            }
                        }
                    }
                });
            }
            Op::Resample(x, plan) => {
                let back = plan.adjoint(g);
                acc(*x, &mut |s| s.iter_mut().zip(&back).for_each(|(s, b)| *s += b));
            }
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`
/// (input index = output index + (k - 1) * dil).
#[inline]
fn tap_range(k: usize, n: usize, dil: usize) -> (usize, usize) {
    match k {
        0 => (dil.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(dil)),
    }
}

/// `dst[y, x] += w * src[y + (ky - 1) * dil, x + (kx - 1) * dil]`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn conv_tap(dst: &mut [f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize, dil: usize, wv: f64) {
    let (y0, y1) = tap_range(ky, h, dil);
    let (x0, x1) = tap_range(kx, w, dil);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = y + ky * dil - dil;
        let sx = x0 + kx * dil - dil;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx..sy * w + sx + (x1 - x0)];
        for (d, s) in d.iter_mut().zip(s) {
            *d += wv * s;
        }
    }
}

/// `sum_{y,x} g[y, x] * src[y + (ky - 1) * dil, x + (kx - 1) * dil]`.
#[inline]
fn conv_tap_dot(g: &[f64], src: &[f64], h: usize, w: usize, ky: usize, kx: usize, dil: usize) -> f64 {
    let (y0, y1) = tap_range(ky, h, dil);
    let (x0, x1) = tap_range(kx, w, dil);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = y + ky * dil - dil;
        let sx = x0 + kx * dil - dil;
        let gr = &g[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx..sy * w + sx + (x1 - x0)];
        for (a, b) in gr.iter().zip(s) {
            acc += a * b;
        }
    }
    acc
}

/// `dst[y + (ky - 1) * dil, x + (kx - 1) * dil] += w * g[y, x]`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn conv_tap_transpose(dst: &mut [f64], g: &[f64], h: usize, w: usize, ky: usize, kx: usize, dil: usize, wv: f64) {
    let (y0, y1) = tap_range(ky, h, dil);
    let (x0, x1) = tap_range(kx, w, dil);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = y + ky * dil - dil;
        let sx = x0 + kx * dil - dil;
        let gr = &g[y * w + x0..y * w + x1];
        let d = &mut dst[sy * w + sx..sy * w + sx + (x1 - x0)];
        for (d, a) in d.iter_mut().zip(gr) {
            *d += wv * a;
        }
    }
}

/// Runs `build` on a fresh tape holding one leaf per parameter, back-propagates
/// from the scalar it returns, and stores the gradients in `params`
/// (overwriting previous contents). Returns the root value.
pub fn forward_backward<F>(params: &mut [Parameter], build: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
    let root = build(&mut tape, &ids)?;
    let grads = tape.backward(root)?;
    for (p, id) in params.iter_mut().zip(&ids) {
        p.zero_grad();
        if let Some(g) = grads.get(*id) {
            p.grad.copy_from_slice(g);
        }
    }
    Ok(tape.value(root).data[0])
}
