//! Recorded-operation graph providing reverse-mode differentiation.
//!
//! A [`Graph`] is built per forward pass: leaves are inserted first, every
//! primitive appends a node holding its eagerly computed value, and
//! [`Graph::backward`] replays the record in reverse, accumulating adjoints.
//! Graphs are discarded after backward; there are no higher-order gradients.

use crate::conv::{
    conv3d_forward, conv3d_input_grad, conv3d_kernel_grad, conv_dims, conv_transpose_extent,
    mm_acc, mm_at_acc, mm_bt_acc,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor applied inside `log` so finite inputs stay finite.
pub const LOG_CLAMP: f64 = 1e-12;

/// Index of a node on the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxLast(NodeId),
    Matmul(NodeId, NodeId),
    /// Broadcast a length-C vector along axis 1 of the first input.
    AddBias(NodeId, NodeId),
    ScaleConst(NodeId),
    AddConst(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Sum over all axes after the first two: [N, C, ...] -> [N, C].
    SumSpatial(NodeId),
    Reshape(NodeId),
    /// Concatenation along axis 1.
    Concat(NodeId, NodeId),
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Conv3dTranspose {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    /// Mean over the batch of logsumexp(row) - row[label]; backward is
    /// (softmax - onehot) / N.
    CrossEntropyLogits(NodeId),
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op,
    /// Saved scalar context (Scale / AddConst factor).
    ctx: F,
    labels: Vec<usize>,
    needs_grad: bool,
}

/// Per-pass recording graph.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads[id.0].take()
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            ctx: F::zero(),
            labels: Vec::new(),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Insert a differentiable leaf (a parameter or an input to navigate on).
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(F, F) -> F,
    ) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), f)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(v, op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        let ng = self.needs(a);
        self.push(v, Op::Neg(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        let ng = self.needs(a);
        self.push(v, Op::Exp(a), ng)
    }

    /// Natural log with the input clamped to `LOG_CLAMP` from below.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let floor = F::from_f64_lossy(LOG_CLAMP);
        let v = self.value(a).map(|x| x.max(floor).ln());
        let ng = self.needs(a);
        self.push(v, Op::Log(a), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(F::zero()));
        let ng = self.needs(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(stable_sigmoid);
        let ng = self.needs(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: NodeId) -> Result<NodeId> {
        let val = self.value(a);
        let shape = val.shape().to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::shape("softmax on rank-0 tensor".to_string()))?;
        let mut data = val.data().to_vec();
        for row in data.chunks_mut(last) {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                denom += *v;
            }
            for v in row.iter_mut() {
                *v = *v / denom;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::SoftmaxLast(a), ng))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        let id = self.push(v, Op::ScaleConst(a), ng);
        self.nodes[id.0].ctx = c;
        id
    }

    pub fn add_const(&mut self, a: NodeId, c: F) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        let id = self.push(v, Op::AddConst(a), ng);
        self.nodes[id.0].ctx = c;
        id
    }

    /// 2-d matrix product [m, k] x [k, n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::Matmul(a, b), ng))
    }

    /// Adds a per-channel vector along axis 1 of `a` ([N, C] or [N, C, ...]).
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if sa.len() < 2 || sb.len() != 1 || sb[0] != sa[1] {
            return Err(Error::shape(format!("add_bias {:?} + {:?}", sa, sb)));
        }
        let channels = sa[1];
        let inner: usize = sa[2..].iter().product();
        let bdata = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(channels * inner) {
            for (c, b) in bdata.iter().enumerate() {
                for v in &mut chunk[c * inner..(c + 1) * inner] {
                    *v += *b;
                }
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::from_vec(sa, data)?, Op::AddBias(a, bias), ng))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = F::from_f64_lossy(self.value(a).numel() as f64);
        let v = Tensor::scalar(self.value(a).sum() / n);
        let ng = self.needs(a);
        self.push(v, Op::Mean(a), ng)
    }

    /// [N, C, ...] -> [N, C], summing the trailing axes.
    pub fn sum_spatial(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        if sa.len() < 2 {
            return Err(Error::shape(format!("sum_spatial on {:?}", sa)));
        }
        let (n, c) = (sa[0], sa[1]);
        let inner: usize = sa[2..].iter().product();
        let mut out = vec![F::zero(); n * c];
        for (i, chunk) in self.value(a).data().chunks(inner).enumerate() {
            out[i] = chunk.iter().copied().sum();
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_vec(vec![n, c], out)?, Op::SumSpatial(a), ng))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).reshaped(shape)?;
        let ng = self.needs(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Concatenation over the channel axis (axis 1).
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        if sa.len() != sb.len() || sa.len() < 2 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape(format!("concat_channels {:?} + {:?}", sa, sb)));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut out = Vec::with_capacity(self.value(a).numel() + self.value(b).numel());
        for n in 0..sa[0] {
            out.extend_from_slice(&self.value(a).data()[n * ca * inner..(n + 1) * ca * inner]);
            out.extend_from_slice(&self.value(b).data()[n * cb * inner..(n + 1) * cb * inner]);
        }
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(shape, out)?, Op::Concat(a, b), ng))
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let mut y = conv3d_forward(self.value(input), self.value(kernel), stride, pad)?;
        let mut ng = self.needs(input) || self.needs(kernel);
        if let Some(b) = bias {
            add_channel_bias(&mut y, self.value(b))?;
            ng = ng || self.needs(b);
        }
        Ok(self.push(y, Op::Conv3d { input, kernel, bias, stride, pad }, ng))
    }

    /// Transposed convolution; kernel layout is [c_in, c_out, k, k, k] so a
    /// forward convolution with the same kernel is its exact adjoint.
    pub fn conv3d_transpose(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 5 || ks.len() != 5 || xs[1] != ks[0] {
            return Err(Error::shape(format!(
                "conv3d_transpose input {:?} vs kernel {:?}",
                xs, ks
            )));
        }
        let k = ks[2];
        let out = [
            conv_transpose_extent(xs[2], k, stride, pad)?,
            conv_transpose_extent(xs[3], k, stride, pad)?,
            conv_transpose_extent(xs[4], k, stride, pad)?,
        ];
        let mut y = conv3d_input_grad(self.value(input), self.value(kernel), stride, pad, out)?;
        let mut ng = self.needs(input) || self.needs(kernel);
        if let Some(b) = bias {
            add_channel_bias(&mut y, self.value(b))?;
            ng = ng || self.needs(b);
        }
        Ok(self.push(y, Op::Conv3dTranspose { input, kernel, bias, stride, pad }, ng))
    }

    /// Batch-mean cross-entropy straight from logits ([N, L]) in
    /// log-sum-exp form.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy_logits on {:?} with {} labels",
                shape,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                shape[1]
            )));
        }
        let l = shape[1];
        let mut total = F::zero();
        for (row, &lab) in self.value(logits).data().chunks(l).zip(labels) {
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
            total += lse - row[lab];
        }
        let v = Tensor::scalar(total / F::from_f64_lossy(labels.len() as f64));
        let ng = self.needs(logits);
        let id = self.push(v, Op::CrossEntropyLogits(logits), ng);
        self.nodes[id.0].labels = labels.to_vec();
        Ok(id)
    }

    /// Reverse sweep from a scalar loss node. Adjoints accumulate additively
    /// across fan-out; each node is visited exactly once.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(
            self.value(loss).shape().to_vec(),
            F::one(),
        ));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<F>>],
        id: NodeId,
        delta: Tensor<F>,
    ) -> Result<()> {
        if !self.nodes[id.0].needs_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<F>,
        grads: &mut Vec<Option<Tensor<F>>>,
    ) -> Result<()> {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.map(|x| -x))?;
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, a, g.zip(self.value(b), |x, y| x * y)?)?;
                self.accumulate(grads, b, g.zip(self.value(a), |x, y| x * y)?)?;
            }
            Op::Div(a, b) => {
                let bv = self.value(b);
                self.accumulate(grads, a, g.zip(bv, |x, y| x / y)?)?;
                let av = self.value(a);
                let db = Tensor::from_vec(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((&gg, &x), &y)| -gg * x / (y * y))
                        .collect(),
                )?;
                self.accumulate(grads, b, db)?;
            }
            Op::Neg(a) => self.accumulate(grads, a, g.map(|x| -x))?,
            Op::Exp(a) => self.accumulate(grads, a, g.zip(&node.value, |x, y| x * y)?)?,
            Op::Log(a) => {
                let floor = F::from_f64_lossy(LOG_CLAMP);
                let da = g.zip(self.value(a), |x, y| {
                    if y >= floor {
                        x / y
                    } else {
                        F::zero()
                    }
                })?;
                self.accumulate(grads, a, da)?;
            }
            Op::Relu(a) => {
                let da = g.zip(self.value(a), |x, y| if y > F::zero() { x } else { F::zero() })?;
                self.accumulate(grads, a, da)?;
            }
            Op::Sigmoid(a) => {
                let da = g.zip(&node.value, |x, y| x * y * (F::one() - y))?;
                self.accumulate(grads, a, da)?;
            }
            Op::SoftmaxLast(a) => {
                let s = &node.value;
                let last = *s.shape().last().unwrap();
                let mut da = vec![F::zero(); s.numel()];
                for ((gr, sr), dr) in g
                    .data()
                    .chunks(last)
                    .zip(s.data().chunks(last))
                    .zip(da.chunks_mut(last))
                {
                    let dot: F = gr.iter().zip(sr).map(|(&x, &y)| x * y).sum();
                    for ((d, &gg), &ss) in dr.iter_mut().zip(gr).zip(sr) {
                        *d = ss * (gg - dot);
                    }
                }
                self.accumulate(grads, a, Tensor::from_vec(s.shape().to_vec(), da)?)?;
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                if self.needs(a) {
                    let mut da = vec![F::zero(); m * k];
                    mm_bt_acc(g.data(), self.value(b).data(), m, n, k, &mut da);
                    self.accumulate(grads, a, Tensor::from_vec(vec![m, k], da)?)?;
                }
                if self.needs(b) {
                    let mut db = vec![F::zero(); k * n];
                    mm_at_acc(self.value(a).data(), g.data(), k, m, n, &mut db);
                    self.accumulate(grads, b, Tensor::from_vec(vec![k, n], db)?)?;
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, a, g.clone())?;
                if self.needs(bias) {
                    self.accumulate(grads, bias, reduce_to_channel(g))?;
                }
            }
            Op::ScaleConst(a) => {
                let c = node.ctx;
                self.accumulate(grads, a, g.map(|x| x * c))?;
            }
            Op::AddConst(a) => self.accumulate(grads, a, g.clone())?,
            Op::Sum(a) => {
                let gv = g.scalar_value()?;
                self.accumulate(grads, a, Tensor::full(self.value(a).shape().to_vec(), gv))?;
            }
            Op::Mean(a) => {
                let n = F::from_f64_lossy(self.value(a).numel() as f64);
                let gv = g.scalar_value()? / n;
                self.accumulate(grads, a, Tensor::full(self.value(a).shape().to_vec(), gv))?;
            }
            Op::SumSpatial(a) => {
                let sa = self.value(a).shape().to_vec();
                let inner: usize = sa[2..].iter().product();
                let mut da = vec![F::zero(); self.value(a).numel()];
                for (chunk, &gv) in da.chunks_mut(inner).zip(g.data()) {
                    for v in chunk {
                        *v = gv;
                    }
                }
                self.accumulate(grads, a, Tensor::from_vec(sa, da)?)?;
            }
            Op::Reshape(a) => {
                self.accumulate(grads, a, g.reshaped(self.value(a).shape().to_vec())?)?;
            }
            Op::Concat(a, b) => {
                let sa = self.value(a).shape().to_vec();
                let sb = self.value(b).shape().to_vec();
                let inner: usize = sa[2..].iter().product();
                let (ca, cb) = (sa[1], sb[1]);
                let mut da = Vec::with_capacity(self.value(a).numel());
                let mut db = Vec::with_capacity(self.value(b).numel());
                for chunk in g.data().chunks((ca + cb) * inner) {
                    da.extend_from_slice(&chunk[..ca * inner]);
                    db.extend_from_slice(&chunk[ca * inner..]);
                }
                self.accumulate(grads, a, Tensor::from_vec(sa, da)?)?;
                self.accumulate(grads, b, Tensor::from_vec(sb, db)?)?;
            }
            Op::Conv3d { input, kernel, bias, stride, pad } => {
                let dims = conv_dims(self.value(input), self.value(kernel), stride, pad)?;
                if self.needs(input) {
                    let dx = conv3d_input_grad(
                        g,
                        self.value(kernel),
                        stride,
                        pad,
                        dims.in_spatial,
                    )?;
                    self.accumulate(grads, input, dx)?;
                }
                if self.needs(kernel) {
                    let dk = conv3d_kernel_grad(self.value(input), g, dims.k, stride, pad)?;
                    self.accumulate(grads, kernel, dk)?;
                }
                if let Some(b) = bias {
                    if self.needs(b) {
                        self.accumulate(grads, b, reduce_to_channel(g))?;
                    }
                }
            }
            Op::Conv3dTranspose { input, kernel, bias, stride, pad } => {
                if self.needs(input) {
                    let dx = conv3d_forward(g, self.value(kernel), stride, pad)?;
                    self.accumulate(grads, input, dx)?;
                }
                if self.needs(kernel) {
                    let k = self.value(kernel).shape()[2];
                    let dk = conv3d_kernel_grad(g, self.value(input), k, stride, pad)?;
                    self.accumulate(grads, kernel, dk)?;
                }
                if let Some(b) = bias {
                    if self.needs(b) {
                        self.accumulate(grads, b, reduce_to_channel(g))?;
                    }
                }
            }
            Op::CrossEntropyLogits(logits) => {
                let lv = self.value(logits);
                let l = lv.shape()[1];
                let n = F::from_f64_lossy(node.labels.len() as f64);
                let gv = g.scalar_value()? / n;
                let mut da = vec![F::zero(); lv.numel()];
                for ((row, &lab), dr) in lv
                    .data()
                    .chunks(l)
                    .zip(&node.labels)
                    .zip(da.chunks_mut(l))
                {
                    let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
                    let denom: F = row.iter().map(|&v| (v - m).exp()).sum();
                    for (j, d) in dr.iter_mut().enumerate() {
                        let p = (row[j] - m).exp() / denom;
                        let onehot = if j == lab { F::one() } else { F::zero() };
                        *d = gv * (p - onehot);
                    }
                }
                self.accumulate(grads, logits, Tensor::from_vec(lv.shape().to_vec(), da)?)?;
            }
        }
        Ok(())
    }
}

fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// In-place bias add along axis 1 of a [N, C, ...] tensor.
fn add_channel_bias<F: Scalar>(y: &mut Tensor<F>, bias: &Tensor<F>) -> Result<()> {
    let shape = y.shape().to_vec();
    if shape.len() < 2 || bias.shape() != [shape[1]] {
        return Err(Error::shape(format!(
            "channel bias {:?} against {:?}",
            bias.shape(),
            shape
        )));
    }
    let channels = shape[1];
    let inner: usize = shape[2..].iter().product();
    let bdata = bias.data().to_vec();
    for chunk in y.data_mut().chunks_mut(channels * inner) {
        for (c, b) in bdata.iter().enumerate() {
            for v in &mut chunk[c * inner..(c + 1) * inner] {
                *v += *b;
            }
        }
    }
    Ok(())
}

/// Sums a [N, C, ...] gradient down to a per-channel [C] vector.
fn reduce_to_channel<F: Scalar>(g: &Tensor<F>) -> Tensor<F> {
    let shape = g.shape();
    let channels = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut out = vec![F::zero(); channels];
    for batch in g.data().chunks(channels * inner) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += batch[c * inner..(c + 1) * inner].iter().copied().sum();
        }
    }
    Tensor::from_vec(vec![channels], out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(t64(vec![2], vec![0.0, 0.0]));
        let s = g.softmax_last(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.constant(t64(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = g.constant(t64(vec![3, 3], (1..=9).map(f64::from).collect()));
        let y = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(y).data(), g.value(a).data());
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.constant(t64(vec![2], vec![-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t64(vec![3], vec![1.0, -2.0, 0.5]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_square_is_2x() {
        let mut g = Graph::new();
        let x = g.leaf(t64(vec![3], vec![1.0, -2.0, 0.5]));
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_rejects_nonscalar() {
        let mut g = Graph::new();
        let x = g.leaf(t64(vec![2], vec![1.0, 2.0]));
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn fanout_accumulates() {
        // loss = sum(x) + sum(x) -> grad 2 everywhere.
        let mut g = Graph::new();
        let x = g.leaf(t64(vec![2], vec![3.0, 4.0]));
        let s1 = g.sum(x);
        let s2 = g.sum(x);
        let tot = g.add(s1, s2).unwrap();
        let grads = g.backward(tot).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn ce_uniform_is_ln2() {
        let mut g = Graph::new();
        let logits = g.constant(t64(vec![2, 2], vec![0.0; 4]));
        let ce = g.cross_entropy_logits(logits, &[0, 1]).unwrap();
        assert!((g.value(ce).scalar_value().unwrap() - (2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(vec![2, 3]));
        let b = g.constant(Tensor::<f64>::zeros(vec![3, 3]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 3]"), "{err}");
    }
}
