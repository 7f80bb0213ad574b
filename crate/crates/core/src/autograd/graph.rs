//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the reverse sweep simply walks
//! the node list backwards. Parameter leaves borrow their values from the
//! [`ParamStore`]; requesting the same parameter twice yields the same node,
//! which is how both siamese branches share one set of weights.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Conv2d { geom: ConvGeom },
    Relu,
    MaxPool2 { argmax: Vec<usize> },
    GlobalMaxPool { argmax: Vec<usize> },
    Linear,
    Softmax,
    Dropout { mask: Vec<f64> },
    SquareDiff,
    Reshape,
    Sum,
    Scale(f64),
    Add,
    NegLog { index: usize },
    Contrastive { same: bool, margin: f64 },
    GradScale(f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::Linear => "linear",
            Op::Softmax => "softmax",
            Op::Dropout { .. } => "dropout",
            Op::SquareDiff => "square_diff",
            Op::Reshape => "reshape",
            Op::Sum => "sum",
            Op::Scale(_) => "scale",
            Op::Add => "add",
            Op::NegLog { .. } => "neg_log",
            Op::Contrastive { .. } => "contrastive",
            Op::GradScale(_) => "grad_scale",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Option<Tensor>,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(idx), _) => self.params.by_index(*idx).1,
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, vec![], t)
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if let Some(&id) = self.param_nodes.get(&idx) {
            return Ok(id);
        }
        self.nodes.push(Node {
            op: Op::Param(idx),
            inputs: vec![],
            value: None,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(idx, id);
        Ok(id)
    }

    /// Convolution of `[C_in,H,W]` or `[N,C_in,H,W]` input with `[C_out,C_in,kH,kW]` weights.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let (batch, c_in, h, w) = match xs.as_slice() {
            [c, h, w] => (None, *c, *h, *w),
            [n, c, h, w] => (Some(*n), *c, *h, *w),
            _ => return Err(Error::shape("conv2d", format!("input must be rank 3 or 4, got {xs:?}"))),
        };
        let [c_out, wc_in, kh, kw] = ws[..] else {
            return Err(Error::shape("conv2d", format!("weight must be rank 4, got {ws:?}")));
        };
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: input has {c_in}, weight expects {wc_in}"),
            ));
        }
        if bs != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias length: expected [{c_out}], got {bs:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if h + 2 * padding < kh {
            return Err(Error::shape(
                "conv2d",
                format!("height: kernel {kh} exceeds padded input {}", h + 2 * padding),
            ));
        }
        if w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("width: kernel {kw} exceeds padded input {}", w + 2 * padding),
            ));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad: padding,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let per_in = c_in * h * w;
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(batch.unwrap_or(1) * c_out * oh * ow);
        for img in xv.chunks(per_in) {
            out.extend(kernels::conv2d_forward(img, wv, bv, &geom));
        }
        let shape = match batch {
            None => vec![c_out, oh, ow],
            Some(n) => vec![n, c_out, oh, ow],
        };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(Op::Conv2d { geom }, vec![x, weight, bias], t))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let out: Vec<f64> = v.data().iter().map(|&a| a.max(0.0)).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        self.push(Op::Relu, vec![x], t)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let [c, h, w] = v.shape()[..] else {
            return Err(Error::shape("maxpool2", format!("expected [C,H,W], got {:?}", v.shape())));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("spatial dims must be even, got {h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(v.data(), c, h, w);
        let t = Tensor::new(vec![c, h / 2, w / 2], out)?;
        Ok(self.push(Op::MaxPool2 { argmax }, vec![x], t))
    }

    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let [c, h, w] = v.shape()[..] else {
            return Err(Error::shape(
                "global_max_pool",
                format!("expected [C,H,W], got {:?}", v.shape()),
            ));
        };
        let (out, argmax) = kernels::global_max_forward(v.data(), c, h * w);
        Ok(self.push(Op::GlobalMaxPool { argmax }, vec![x], Tensor::vector(out)))
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let d_in = xv.len();
        if xv.rank() != 1 {
            return Err(Error::shape("linear", format!("input must be a vector, got {:?}", xv.shape())));
        }
        let [d_out, wd_in] = wv.shape()[..] else {
            return Err(Error::shape("linear", format!("weight must be rank 2, got {:?}", wv.shape())));
        };
        if wd_in != d_in {
            return Err(Error::shape(
                "linear",
                format!("input dim: weight expects {wd_in}, input has {d_in}"),
            ));
        }
        if bv.shape() != [d_out] {
            return Err(Error::shape(
                "linear",
                format!("bias length: expected [{d_out}], got {:?}", bv.shape()),
            ));
        }
        let out = kernels::linear_forward(xv.data(), wv.data(), bv.data());
        Ok(self.push(Op::Linear, vec![x, weight, bias], Tensor::vector(out)))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 1 || v.len() < 2 {
            return Err(Error::shape("softmax", format!("need a vector of length >= 2, got {:?}", v.shape())));
        }
        let out = kernels::softmax(v.data());
        Ok(self.push(Op::Softmax, vec![x], Tensor::vector(out)))
    }

    /// Inverted dropout; identity when `training` is false or `rate` is zero.
    pub fn dropout(&mut self, x: NodeId, rate: f64, training: bool, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let v = self.value(x);
        let n = v.len();
        let mask = if training && rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
                .collect()
        } else {
            vec![1.0; n]
        };
        let out: Vec<f64> = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(Op::Dropout { mask }, vec![x], t))
    }

    /// Elementwise `(a - b)^2`.
    pub fn square_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "square_diff",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(Op::SquareDiff, vec![a, b], t))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape, vec![x], t))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        self.reshape(x, &[n]).expect("flatten preserves size")
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x);
        let out: Vec<f64> = v.data().iter().map(|a| a * c).collect();
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        self.push(Op::Scale(c), vec![x], t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(Op::Add, vec![a, b], t))
    }

    /// `-ln(p[index])` for a probability vector `p`.
    pub fn neg_log(&mut self, p: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(p);
        if v.rank() != 1 || index >= v.len() {
            return Err(Error::InvalidArgument(format!(
                "class index {index} out of range for {:?}",
                v.shape()
            )));
        }
        let loss = -v.data()[index].max(f64::MIN_POSITIVE).ln();
        Ok(self.push(Op::NegLog { index }, vec![p], Tensor::scalar(loss)))
    }

    /// Contrastive pair loss on raw embeddings: `d^2` for same pairs,
    /// `max(0, margin - d)^2` for different pairs, with `d = ||a - b||`.
    pub fn contrastive(&mut self, a: NodeId, b: NodeId, same: bool, margin: f64) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("contrastive", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        if margin <= 0.0 {
            return Err(Error::InvalidArgument(format!("contrastive margin {margin} must be > 0")));
        }
        let d2: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let loss = if same {
            d2
        } else {
            let h = (margin - d2.sqrt()).max(0.0);
            h * h
        };
        Ok(self.push(Op::Contrastive { same, margin }, vec![a, b], Tensor::scalar(loss)))
    }

    /// Identity in the forward pass; multiplies the gradient by `c` on the way back.
    pub fn grad_scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x).clone();
        self.push(Op::GradScale(c), vec![x], t)
    }

    /// First node (in recording order) whose value is not finite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(v) = &node.value {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        op: node.op.name(),
                        node: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contribs = self.node_backward(node, NodeId(id), &g);
            for (input, dg) in node.inputs.iter().zip(contribs) {
                let Some(dg) = dg else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(dg),
                }
            }
            grads[id] = Some(g);
        }
        let mut params = vec![None; self.params.len()];
        for (&pidx, nid) in &self.param_nodes {
            params[pidx] = grads[nid.0].clone();
        }
        Ok(Gradients {
            nodes: grads,
            params: ParamGrads(params),
        })
    }

    fn node_backward(&self, node: &Node, id: NodeId, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let inp = |k: usize| self.value(node.inputs[k]);
        match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d { geom, .. } => {
                let x = inp(0).data();
                let w = inp(1).data();
                let per_in = geom.c_in * geom.h * geom.w;
                let per_out = geom.c_out * geom.out_h() * geom.out_w();
                let mut dx = Vec::with_capacity(x.len());
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; geom.c_out];
                for (img, gimg) in x.chunks(per_in).zip(g.chunks(per_out)) {
                    let (dxi, dwi, dbi) = kernels::conv2d_backward(img, w, gimg, geom);
                    dx.extend(dxi);
                    dw.iter_mut().zip(&dwi).for_each(|(a, b)| *a += b);
                    db.iter_mut().zip(&dbi).for_each(|(a, b)| *a += b);
                }
                vec![Some(dx), Some(dw), Some(db)]
            }
            Op::Relu => {
                let x = inp(0).data();
                vec![Some(x.iter().zip(g).map(|(&a, &gi)| if a > 0.0 { gi } else { 0.0 }).collect())]
            }
            Op::MaxPool2 { argmax } | Op::GlobalMaxPool { argmax } => {
                let mut dx = vec![0.0; inp(0).len()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
                vec![Some(dx)]
            }
            Op::Linear => {
                let x = inp(0).data();
                let w = inp(1).data();
                let d_in = x.len();
                let mut dx = vec![0.0; d_in];
                let mut dw = vec![0.0; w.len()];
                for (o, &go) in g.iter().enumerate() {
                    let row = &w[o * d_in..(o + 1) * d_in];
                    dx.iter_mut().zip(row).for_each(|(d, wv)| *d += go * wv);
                    dw[o * d_in..(o + 1) * d_in]
                        .iter_mut()
                        .zip(x)
                        .for_each(|(d, xv)| *d = go * xv);
                }
                vec![Some(dx), Some(dw), Some(g.to_vec())]
            }
            Op::Softmax => {
                let p = self.value(id).data();
                let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                vec![Some(p.iter().zip(g).map(|(pi, gi)| pi * (gi - gp)).collect())]
            }
            Op::Dropout { mask } => vec![Some(g.iter().zip(mask).map(|(a, m)| a * m).collect())],
            Op::SquareDiff => {
                let (a, b) = (inp(0).data(), inp(1).data());
                let da: Vec<f64> = a.iter().zip(b).zip(g).map(|((x, y), gi)| 2.0 * (x - y) * gi).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![Some(da), Some(db)]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::GradScale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::Sum => vec![Some(vec![g[0]; inp(0).len()])],
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::NegLog { index } => {
                let p = inp(0).data();
                let mut dp = vec![0.0; p.len()];
                dp[*index] = -g[0] / p[*index].max(f64::MIN_POSITIVE);
                vec![Some(dp)]
            }
            Op::Contrastive { same, margin } => {
                let (a, b) = (inp(0).data(), inp(1).data());
                let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                let coef = if *same {
                    2.0
                } else {
                    let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                    // subgradient 0 at the hinge and at d = 0
                    if d >= *margin || d == 0.0 {
                        0.0
                    } else {
                        -2.0 * (margin - d) / d
                    }
                };
                let da: Vec<f64> = diff.iter().map(|v| coef * v * g[0]).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![Some(da), Some(db)]
            }
        }
    }
}

/// Per-parameter gradient buffers, indexed like the owning [`ParamStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrads(pub Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads(vec![None; store.len()])
    }

    pub fn get(&self, idx: usize) -> Option<&[f64]> {
        self.0.get(idx).and_then(|g| g.as_deref())
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, c: f64) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (dst, src) in self.0.iter_mut().zip(&other.0) {
            let Some(src) = src else { continue };
            match dst {
                Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += c * b),
                None => *dst = Some(src.iter().map(|b| c * b).collect()),
            }
        }
    }

    /// Adds into each parameter's grad buffer (`+=`).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (idx, g) in self.0.iter().enumerate() {
            let Some(g) = g else { continue };
            let (_, t) = store.by_index_mut(idx);
            t.grad_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node's value, if the node was reached.
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) {
        self.params.accumulate_into(store);
    }
}
