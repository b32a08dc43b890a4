//! A small tape-based reverse-mode autodiff engine.
//!
//! Activations live on a [`Tape`]; learnable weights live in a [`ParamStore`]
//! that outlives any single tape. Operations read parameters by [`ParamId`],
//! and [`Tape::backward`] accumulates parameter gradients into the store.

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use crate::error::{Error, Result};

/// Dense f32 tensor. `grad` is only populated for parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, buffer has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Shape(format!("expected NCHW tensor, got {:?}", self.shape))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Learnable weights in creation order (the canonical parameter order).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        tensor.grad = Some(vec![0.0; tensor.len()]);
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.tensors[id.0].data
    }

    pub fn grad(&self, id: ParamId) -> &[f32] {
        self.tensors[id.0].grad.as_deref().expect("parameters carry gradients")
    }

    /// Value and gradient buffers of one parameter, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [f32], &mut [f32]) {
        let t = &mut self.tensors[id.0];
        (&mut t.data, t.grad.as_mut().expect("parameters carry gradients"))
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| ParamInfo {
                name: name.clone(),
                shape: t.shape.clone(),
            })
            .collect()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Relu(NodeId),
    Conv {
        x: NodeId,
        w: ParamId,
        geom: ConvGeom,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: NodeId,
        geom: PoolGeom,
    },
    WeightedSum(Vec<(NodeId, f32)>),
    Concat(Vec<NodeId>),
    GlobalAvgPool(NodeId),
    Linear {
        x: NodeId,
        w: ParamId,
        b: ParamId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inference: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that does not record what backward would need.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let data = v.data.iter().map(|&a| a.max(0.0)).collect();
        let out = Tensor::new(v.shape.clone(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn conv2d(&mut self, params: &ParamStore, x: NodeId, w: ParamId, geom: ConvGeom) -> Result<NodeId> {
        let xv = self.value(x);
        let dims = xv.dims4()?;
        if dims[1] != geom.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                geom.in_channels, dims[1]
            )));
        }
        let wt = params.get(w);
        if wt.shape[..] != geom.weight_shape() {
            return Err(Error::Shape(format!(
                "weight `{}` is {:?}, convolution needs {:?}",
                params.name(w),
                wt.shape,
                geom.weight_shape()
            )));
        }
        let (data, shape) = kernels::conv2d_forward(&xv.data, dims, &wt.data, &geom);
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(out, Op::Conv { x, w, geom }, true))
    }

    pub fn max_pool3x3(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let dims = xv.dims4()?;
        let (data, argmax, shape) = kernels::max_pool_forward(&xv.data, dims, PoolGeom { stride });
        let out = Tensor::new(shape.to_vec(), data)?;
        let argmax = if self.inference { Vec::new() } else { argmax };
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    pub fn avg_pool3x3(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let dims = xv.dims4()?;
        let geom = PoolGeom { stride };
        let (data, shape) = kernels::avg_pool_forward(&xv.data, dims, geom);
        let out = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AvgPool { x, geom }, rg))
    }

    /// `sum_i w_i * x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f32)]) -> Result<NodeId> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Shape("weighted sum of no terms".into()))?;
        let shape = self.value(first.0).shape.clone();
        let mut acc = vec![0.0f32; self.value(first.0).len()];
        for &(id, w) in terms {
            let v = self.value(id);
            if v.shape != shape {
                return Err(Error::Shape(format!(
                    "weighted sum operands disagree: {:?} vs {:?}",
                    shape, v.shape
                )));
            }
            for (a, &b) in acc.iter_mut().zip(&v.data) {
                *a += w * b;
            }
        }
        let rg = terms.iter().any(|&(id, _)| self.rg(id));
        Ok(self.push(Tensor::new(shape, acc)?, Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Concatenate NCHW tensors along channels.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let dims: Vec<[usize; 4]> = xs.iter().map(|&x| self.value(x).dims4()).collect::<Result<_>>()?;
        let [n, _, h, w] = *dims
            .first()
            .ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
        if dims.iter().any(|d| d[0] != n || d[2] != h || d[3] != w) {
            return Err(Error::Shape(format!("concat operands disagree: {dims:?}")));
        }
        let c_total: usize = dims.iter().map(|d| d[1]).sum();
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for b in 0..n {
            for (&x, d) in xs.iter().zip(&dims) {
                let block = d[1] * h * w;
                data.extend_from_slice(&self.value(x).data[b * block..(b + 1) * block]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(vec![n, c_total, h, w], data)?, Op::Concat(xs.to_vec()), rg))
    }

    /// NCHW -> NC by spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims4()?;
        let hw = h * w;
        let data = xv
            .data
            .chunks(hw)
            .map(|p| p.iter().sum::<f32>() / hw as f32)
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, c], data)?, Op::GlobalAvgPool(x), rg))
    }

    /// `x W^T + b` with `W: [out, in]`.
    pub fn linear(&mut self, params: &ParamStore, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let xv = self.value(x);
        let (wt, bt) = (params.get(w), params.get(b));
        let (n, fin) = match xv.shape[..] {
            [n, f] => (n, f),
            _ => return Err(Error::Shape(format!("linear expects [batch, features], got {:?}", xv.shape))),
        };
        let fout = bt.len();
        if wt.shape != [fout, fin] {
            return Err(Error::Shape(format!(
                "linear weight is {:?}, expected [{fout}, {fin}]",
                wt.shape
            )));
        }
        let mut data = Vec::with_capacity(n * fout);
        for row in xv.data.chunks(fin) {
            for o in 0..fout {
                let wrow = &wt.data[o * fin..(o + 1) * fin];
                data.push(bt.data[o] + wrow.iter().zip(row).map(|(a, b)| a * b).sum::<f32>());
            }
        }
        Ok(self.push(Tensor::new(vec![n, fout], data)?, Op::Linear { x, w, b }, true))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (n, k) = match lv.shape[..] {
            [n, k] => (n, k),
            _ => return Err(Error::Shape(format!("logits must be [batch, classes], got {:?}", lv.shape))),
        };
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Shape(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0f64;
        for (row, &label) in lv.data.chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            loss += (sum.ln() - (row[label] - max)) as f64;
            probs.extend(exps.iter().map(|e| e / sum));
        }
        let value = Tensor::new(vec![1], vec![(loss / n as f64) as f32])?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data.iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![1], vec![s as f32]).expect("scalar"), Op::Sum(x), rg)
    }

    /// Fingerprint of every ReLU sign mask and max-pool argmax on the tape.
    /// Two forward passes with equal fingerprints lie in the same linear
    /// region of the network.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for chunk in self.value(*x).data.chunks(64) {
                        let mut bits = 0u64;
                        for (i, &v) in chunk.iter().enumerate() {
                            if v > 0.0 {
                                bits |= 1 << i;
                            }
                        }
                        bits.hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Back-propagate from a scalar node and add parameter gradients into `params`.
    pub fn backward(&self, loss: NodeId, params: &mut ParamStore) -> Result<()> {
        if self.inference {
            return Err(Error::Autodiff("backward on an inference tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Autodiff("backward without a recorded forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut pgrads: Vec<Option<Vec<f32>>> = vec![None; params.len()];

        fn slot(grads: &mut [Option<Vec<f32>>], id: NodeId, len: usize) -> &mut Vec<f32> {
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Relu(x) => {
                    let xv = &self.value(*x).data;
                    let gx = slot(&mut grads, *x, xv.len());
                    for ((d, &v), &go) in gx.iter_mut().zip(xv).zip(&g) {
                        if v > 0.0 {
                            *d += go;
                        }
                    }
                }
                Op::Conv { x, w, geom } => {
                    let xv = self.value(*x);
                    let dims = xv.dims4()?;
                    let wv = &params.get(*w).data;
                    let pg = pgrads[w.0].get_or_insert_with(|| vec![0.0; wv.len()]);
                    if self.rg(*x) {
                        let gx = slot(&mut grads, *x, xv.len());
                        kernels::conv2d_backward(&xv.data, dims, wv, geom, &g, Some(gx), pg);
                    } else {
                        kernels::conv2d_backward(&xv.data, dims, wv, geom, &g, None, pg);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let dims = xv.dims4()?;
                    let out_hw = node.value.shape[2] * node.value.shape[3];
                    let gx = slot(&mut grads, *x, xv.len());
                    kernels::max_pool_backward(argmax, dims, out_hw, &g, gx);
                }
                Op::AvgPool { x, geom } => {
                    let xv = self.value(*x);
                    let dims = xv.dims4()?;
                    let gx = slot(&mut grads, *x, xv.len());
                    kernels::avg_pool_backward(dims, *geom, &g, gx);
                }
                Op::WeightedSum(terms) => {
                    for &(x, w) in terms {
                        if self.rg(x) {
                            let gx = slot(&mut grads, x, g.len());
                            for (d, &go) in gx.iter_mut().zip(&g) {
                                *d += w * go;
                            }
                        }
                    }
                }
                Op::Concat(xs) => {
                    let [n, ctot, h, w] = node.value.dims4()?;
                    let mut offset = 0;
                    for &x in xs {
                        let c = self.value(x).shape[1];
                        if self.rg(x) {
                            let gx = slot(&mut grads, x, n * c * h * w);
                            for b in 0..n {
                                let src = &g[(b * ctot + offset) * h * w..(b * ctot + offset + c) * h * w];
                                let dst = &mut gx[b * c * h * w..(b + 1) * c * h * w];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let xv = self.value(*x);
                    let [_, _, h, w] = xv.dims4()?;
                    let hw = h * w;
                    let gx = slot(&mut grads, *x, xv.len());
                    for (plane, &go) in gx.chunks_mut(hw).zip(&g) {
                        let share = go / hw as f32;
                        plane.iter_mut().for_each(|d| *d += share);
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let fin = xv.shape[1];
                    let fout = node.value.shape[1];
                    let wv = &params.get(*w).data;
                    {
                        let gw = pgrads[w.0].get_or_insert_with(|| vec![0.0; wv.len()]);
                        for (row, grow) in xv.data.chunks(fin).zip(g.chunks(fout)) {
                            for (o, &go) in grow.iter().enumerate() {
                                for (d, &xi) in gw[o * fin..(o + 1) * fin].iter_mut().zip(row) {
                                    *d += go * xi;
                                }
                            }
                        }
                    }
                    {
                        let gb = pgrads[b.0].get_or_insert_with(|| vec![0.0; fout]);
                        for grow in g.chunks(fout) {
                            for (d, &go) in gb.iter_mut().zip(grow) {
                                *d += go;
                            }
                        }
                    }
                    if self.rg(*x) {
                        let gx = slot(&mut grads, *x, xv.len());
                        for (gxr, grow) in gx.chunks_mut(fin).zip(g.chunks(fout)) {
                            for (o, &go) in grow.iter().enumerate() {
                                for (d, &wi) in gxr.iter_mut().zip(&wv[o * fin..(o + 1) * fin]) {
                                    *d += go * wi;
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let k = self.value(*logits).shape[1];
                    let n = labels.len();
                    let scale = g[0] / n as f32;
                    let gx = slot(&mut grads, *logits, n * k);
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gx[b * k + c] += scale * (probs[b * k + c] - onehot);
                        }
                    }
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    let gx = slot(&mut grads, *x, len);
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }

        for (id, pg) in pgrads.into_iter().enumerate() {
            if let Some(pg) = pg {
                let (_, grad) = params.value_and_grad_mut(ParamId(id));
                for (d, s) in grad.iter_mut().zip(pg) {
                    *d += s;
                }
            }
        }
        Ok(())
    }
}
