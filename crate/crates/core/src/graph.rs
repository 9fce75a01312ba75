//! Reverse-mode differentiation over an append-only value graph.
//!
//! Every operation appends a node holding its output tensor; inputs of node
//! `k` always have indices below `k`, so the node list is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Nodes are never mutated after creation (gradients aside).

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    GlobalAvgPool,
    AvgPool { factor: usize },
    FullyConnected,
    Softmax,
    Sigmoid,
    Relu,
    AddN,
    ConcatColumns,
    ChannelScale,
    Conv2d { stride: usize, pad: usize },
    Gather { indices: Vec<usize> },
    Sum,
    Scale(f64),
    SoftmaxCrossEntropy { target: usize },
    BceWithLogits { targets: Vec<f64> },
    L1 { targets: Vec<f64> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::AvgPool { .. } => "avg_pool",
            Op::FullyConnected => "fully_connected",
            Op::Softmax => "softmax",
            Op::Sigmoid => "sigmoid",
            Op::Relu => "relu",
            Op::AddN => "add",
            Op::ConcatColumns => "concat_columns",
            Op::ChannelScale => "channelwise_scale",
            Op::Conv2d { .. } => "conv2d",
            Op::Gather { .. } => "gather",
            Op::Sum => "sum",
            Op::Scale(_) => "scale",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::L1 { .. } => "l1",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
    scope: usize,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    scopes: Vec<String>,
    current_scope: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scopes: vec![String::from("<root>")],
            current_scope: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Labels subsequently created nodes, for diagnostics.
    pub fn set_scope(&mut self, name: &str) {
        match self.scopes.iter().position(|s| s == name) {
            Some(i) => self.current_scope = i,
            None => {
                self.scopes.push(name.to_owned());
                self.current_scope = self.scopes.len() - 1;
            }
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> NodeId {
        value.clear_grad();
        self.push(Op::Leaf, Vec::new(), value, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn take_value(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    /// Gradient as a tensor shaped like the node's value.
    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor> {
        let v = &self.nodes[id.0].value;
        v.grad()
            .map(|g| Tensor::from_parts(v.shape().to_vec(), g.to_vec()))
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scope label and op name of the first node with a non-finite value.
    pub fn first_non_finite(&self) -> Option<(String, &'static str)> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| (self.scopes[n.scope].clone(), n.op.name()))
    }

    /// Side of the kink for every input element of a piecewise-linear op
    /// (ReLU, L1), in node order. Two evaluations of the same graph lie on
    /// one linear piece of those ops exactly when their signatures match.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu => sig.extend(
                    self.nodes[n.inputs[0].0]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v > 0.0),
                ),
                Op::L1 { targets } => sig.extend(
                    self.nodes[n.inputs[0].0]
                        .value
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(x, t)| x > t),
                ),
                _ => {}
            }
        }
        sig
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(inputs.iter().all(|i| i.0 < self.nodes.len()));
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
            scope: self.current_scope,
        });
        id
    }

    fn push_op(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(op, inputs, value, requires_grad)
    }

    fn dims3(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        self.value(id)
            .dims3()
            .map_err(|e| Error::shape(format!("{what}: {e}")))
    }

    fn vector_len(&self, id: NodeId, what: &str) -> Result<usize> {
        match self.value(id).shape() {
            [n] => Ok(*n),
            s => Err(Error::shape(format!("{what}: expected vector, got {s:?}"))),
        }
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.dims3(x, "global_avg_pool")?;
        let hw = h * w;
        let xv = self.value(x).data();
        let out = (0..c)
            .map(|ch| xv[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push_op(Op::GlobalAvgPool, vec![x], Tensor::from_parts(vec![c], out)))
    }

    /// Non-overlapping `factor×factor` average pooling.
    pub fn avg_pool(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (c, h, w) = self.dims3(x, "avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(format!(
                "avg_pool factor {factor} does not divide {h}×{w}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let xv = self.value(x).data();
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * oh + y / factor) * ow + xx / factor] += xv[(ch * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        Ok(self.push_op(
            Op::AvgPool { factor },
            vec![x],
            Tensor::from_parts(vec![c, oh, ow], out),
        ))
    }

    /// `W·x + b` for `W: K×M`, `x: M`, optional `b: K`.
    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let m = self.vector_len(x, "fully_connected input")?;
        let (k, wm) = self
            .value(w)
            .dims2()
            .map_err(|e| Error::shape(format!("fully_connected weight: {e}")))?;
        if wm != m {
            return Err(Error::shape(format!(
                "fully_connected: weight is {k}×{wm} but input has length {m}"
            )));
        }
        if let Some(b) = b {
            let bl = self.vector_len(b, "fully_connected bias")?;
            if bl != k {
                return Err(Error::shape(format!(
                    "fully_connected: bias length {bl} for {k} outputs"
                )));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out: Vec<f64> = (0..k)
            .map(|r| {
                wv[r * m..(r + 1) * m]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            for (o, bb) in out.iter_mut().zip(self.value(b).data()) {
                *o += bb;
            }
            inputs.push(b);
        }
        Ok(self.push_op(Op::FullyConnected, inputs, Tensor::from_parts(vec![k], out)))
    }

    pub fn softmax(&mut self, z: NodeId) -> Result<NodeId> {
        let zv = self.value(z);
        if zv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Value("softmax input contains NaN".into()));
        }
        let out = softmax_slice(zv.data());
        let shape = zv.shape().to_vec();
        Ok(self.push_op(Op::Softmax, vec![z], Tensor::from_parts(shape, out)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push_op(Op::Sigmoid, vec![x], Tensor::from_parts(shape, out)))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        // `f64::max` would turn NaN into 0 and hide a divergence.
        let out = xv
            .data()
            .iter()
            .map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
            .collect();
        let shape = xv.shape().to_vec();
        Ok(self.push_op(Op::Relu, vec![x], Tensor::from_parts(shape, out)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.add_all(&[a, b])
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add_all(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("add of zero operands"))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = self.value(first).data().to_vec();
        for &x in &xs[1..] {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "add: shape {:?} vs {:?}",
                    shape,
                    v.shape()
                )));
            }
            for (o, a) in out.iter_mut().zip(v.data()) {
                *o += a;
            }
        }
        Ok(self.push_op(Op::AddN, xs.to_vec(), Tensor::from_parts(shape, out)))
    }

    /// Stacks `N` vectors of length `C` as the columns of a `C×N` matrix.
    pub fn concat_columns(&mut self, columns: &[NodeId]) -> Result<NodeId> {
        let n = columns.len();
        if n == 0 {
            return Err(Error::shape("concat_columns of zero vectors"));
        }
        let c = self.vector_len(columns[0], "concat_columns")?;
        let mut out = vec![0.0; c * n];
        for (i, &col) in columns.iter().enumerate() {
            let len = self.vector_len(col, "concat_columns")?;
            if len != c {
                return Err(Error::shape(format!(
                    "concat_columns: column {i} has length {len}, expected {c}"
                )));
            }
            for (r, v) in self.value(col).data().iter().enumerate() {
                out[r * n + i] = *v;
            }
        }
        Ok(self.push_op(
            Op::ConcatColumns,
            columns.to_vec(),
            Tensor::from_parts(vec![c, n], out),
        ))
    }

    /// `out[c,h,w] = x[c,h,w] · s[c]`.
    pub fn channelwise_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.dims3(x, "channelwise_scale")?;
        let sl = self.vector_len(s, "channelwise_scale scale")?;
        if sl != c {
            return Err(Error::shape(format!(
                "channelwise_scale: {sl} scales for {c} channels"
            )));
        }
        let hw = h * w;
        let xv = self.value(x).data();
        let sv = self.value(s).data();
        let mut out = xv.to_vec();
        for (ch, &scale) in sv.iter().enumerate() {
            out[ch * hw..(ch + 1) * hw]
                .iter_mut()
                .for_each(|v| *v *= scale);
        }
        Ok(self.push_op(
            Op::ChannelScale,
            vec![x, s],
            Tensor::from_parts(vec![c, h, w], out),
        ))
    }

    /// Direct 2-D convolution (cross-correlation) with zero padding.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (cin, h, w) = self.dims3(x, "conv2d input")?;
        let geom = match self.value(kernel).shape()[..] {
            [co, ci, kh, kw] if ci == cin && kh == kw && kh % 2 == 1 => ConvGeom {
                cin,
                cout: co,
                h,
                w,
                k: kh,
                stride,
                pad,
            },
            ref s => {
                return Err(Error::shape(format!(
                    "conv2d: kernel {s:?} incompatible with {cin}-channel input (odd square kernel required)"
                )))
            }
        };
        if stride == 0 || h + 2 * pad < geom.k || w + 2 * pad < geom.k {
            return Err(Error::shape(format!(
                "conv2d: nonpositive output extent for {h}×{w}, k={}, stride={stride}, pad={pad}",
                geom.k
            )));
        }
        if let Some(b) = bias {
            let bl = self.vector_len(b, "conv2d bias")?;
            if bl != geom.cout {
                return Err(Error::shape(format!(
                    "conv2d: bias length {bl} for {} output channels",
                    geom.cout
                )));
            }
        }
        let (oh, ow) = geom.out_dims();
        let mut out = vec![0.0; geom.cout * oh * ow];
        if let Some(b) = bias {
            for (o, &bv) in self.value(b).data().iter().enumerate() {
                out[o * oh * ow..(o + 1) * oh * ow].fill(bv);
            }
        }
        geom.forward(self.value(x).data(), self.value(kernel).data(), &mut out);
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push_op(
            Op::Conv2d { stride, pad },
            inputs,
            Tensor::from_parts(vec![geom.cout, oh, ow], out),
        ))
    }

    /// Picks flat elements into a vector.
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of range for {} elements",
                xv.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::shape("gather of zero indices"));
        }
        let out = indices.iter().map(|&i| xv[i]).collect();
        Ok(self.push_op(Op::Gather { indices }, vec![x], Tensor::vector(out)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push_op(Op::Sum, vec![x], Tensor::scalar(s)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v * factor).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push_op(Op::Scale(factor), vec![x], Tensor::from_parts(shape, out)))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `logsumexp(z) − z[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let n = self.vector_len(logits, "softmax_cross_entropy")?;
        if target >= n {
            return Err(Error::shape(format!(
                "cross-entropy target {target} for {n} classes"
            )));
        }
        let z = self.value(logits).data();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - z[target];
        Ok(self.push_op(
            Op::SoftmaxCrossEntropy { target },
            vec![logits],
            Tensor::scalar(loss),
        ))
    }

    /// Sum of elementwise binary cross-entropies between `sigmoid(z)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::shape(format!(
                "bce_with_logits: {} logits, {} targets",
                z.len(),
                targets.len()
            )));
        }
        let loss = z
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push_op(
            Op::BceWithLogits { targets },
            vec![logits],
            Tensor::scalar(loss),
        ))
    }

    /// `Σ |x − t|`.
    pub fn l1(&mut self, x: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x).data();
        if xv.len() != targets.len() {
            return Err(Error::shape(format!(
                "l1: {} values, {} targets",
                xv.len(),
                targets.len()
            )));
        }
        let loss = xv.iter().zip(&targets).map(|(a, b)| (a - b).abs()).sum();
        Ok(self.push_op(Op::L1 { targets }, vec![x], Tensor::scalar(loss)))
    }

    /// Accumulates `d loss / d node` into every node that influences `loss`
    /// and tracks gradients. Nodes outside that set keep whatever gradient
    /// they had.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for k in (0..n).rev() {
            let Some(g) = grads[k].take() else { continue };
            if !self.nodes[k].requires_grad {
                continue;
            }
            self.propagate(k, &g, &mut grads);
            self.nodes[k]
                .value
                .set_grad(g)
                .expect("gradient matches node shape");
        }
        Ok(())
    }

    fn propagate(&self, k: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[k];
        let inputs = &node.inputs;
        let out = node.value.data();
        let wants = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let mut acc = |id: NodeId, f: &dyn Fn(&mut [f64])| {
            let len = self.nodes[id.0].value.numel();
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::GlobalAvgPool => {
                let x = &self.nodes[inputs[0].0].value;
                let (_, h, w) = x.dims3().expect("rank checked");
                let hw = h * w;
                acc(inputs[0], &|dx| {
                    for (ch, gv) in g.iter().enumerate() {
                        let v = gv / hw as f64;
                        dx[ch * hw..(ch + 1) * hw].iter_mut().for_each(|d| *d += v);
                    }
                });
            }
            Op::AvgPool { factor } => {
                let f = *factor;
                let x = &self.nodes[inputs[0].0].value;
                let (c, h, w) = x.dims3().expect("rank checked");
                let (oh, ow) = (h / f, w / f);
                let norm = 1.0 / (f * f) as f64;
                acc(inputs[0], &|dx| {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                dx[(ch * h + y) * w + xx] +=
                                    g[(ch * oh + y / f) * ow + xx / f] * norm;
                            }
                        }
                    }
                });
            }
            Op::FullyConnected => {
                let xv = self.nodes[inputs[0].0].value.data();
                let wv = self.nodes[inputs[1].0].value.data();
                let m = xv.len();
                if wants(0) {
                    acc(inputs[0], &|dx| {
                        for (r, gv) in g.iter().enumerate() {
                            for (d, wrc) in dx.iter_mut().zip(&wv[r * m..(r + 1) * m]) {
                                *d += gv * wrc;
                            }
                        }
                    });
                }
                if wants(1) {
                    acc(inputs[1], &|dw| {
                        for (r, gv) in g.iter().enumerate() {
                            for (d, xc) in dw[r * m..(r + 1) * m].iter_mut().zip(xv) {
                                *d += gv * xc;
                            }
                        }
                    });
                }
                if inputs.len() == 3 && wants(2) {
                    acc(inputs[2], &|db| add_into(db, g));
                }
            }
            Op::Softmax => {
                let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                acc(inputs[0], &|dz| {
                    for ((d, y), gv) in dz.iter_mut().zip(out).zip(g) {
                        *d += y * (gv - dot);
                    }
                });
            }
            Op::Sigmoid => acc(inputs[0], &|dx| {
                for ((d, y), gv) in dx.iter_mut().zip(out).zip(g) {
                    *d += gv * y * (1.0 - y);
                }
            }),
            Op::Relu => {
                let xv = self.nodes[inputs[0].0].value.data();
                acc(inputs[0], &|dx| {
                    for ((d, x), gv) in dx.iter_mut().zip(xv).zip(g) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::AddN => {
                for (i, &id) in inputs.iter().enumerate() {
                    if wants(i) {
                        acc(id, &|dx| add_into(dx, g));
                    }
                }
            }
            Op::ConcatColumns => {
                let n = inputs.len();
                for (i, &id) in inputs.iter().enumerate() {
                    if wants(i) {
                        acc(id, &|dv| {
                            for (r, d) in dv.iter_mut().enumerate() {
                                *d += g[r * n + i];
                            }
                        });
                    }
                }
            }
            Op::ChannelScale => {
                let x = &self.nodes[inputs[0].0].value;
                let sv = self.nodes[inputs[1].0].value.data();
                let (_, h, w) = x.dims3().expect("rank checked");
                let hw = h * w;
                if wants(0) {
                    acc(inputs[0], &|dx| {
                        for (ch, s) in sv.iter().enumerate() {
                            let r = ch * hw..(ch + 1) * hw;
                            for (d, gv) in dx[r.clone()].iter_mut().zip(&g[r]) {
                                *d += gv * s;
                            }
                        }
                    });
                }
                if wants(1) {
                    let xv = x.data();
                    acc(inputs[1], &|ds| {
                        for (ch, d) in ds.iter_mut().enumerate() {
                            let r = ch * hw..(ch + 1) * hw;
                            *d += g[r.clone()]
                                .iter()
                                .zip(&xv[r])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    });
                }
            }
            Op::Conv2d { stride, pad } => {
                let x = &self.nodes[inputs[0].0].value;
                let kern = &self.nodes[inputs[1].0].value;
                let (cin, h, w) = x.dims3().expect("rank checked");
                let geom = ConvGeom {
                    cin,
                    cout: kern.shape()[0],
                    h,
                    w,
                    k: kern.shape()[2],
                    stride: *stride,
                    pad: *pad,
                };
                if wants(0) {
                    acc(inputs[0], &|dx| geom.backward_input(kern.data(), g, dx));
                }
                if wants(1) {
                    acc(inputs[1], &|dk| geom.backward_kernel(x.data(), g, dk));
                }
                if inputs.len() == 3 && wants(2) {
                    let (oh, ow) = geom.out_dims();
                    let plane = oh * ow;
                    acc(inputs[2], &|db| {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Gather { indices } => acc(inputs[0], &|dx| {
                for (&i, gv) in indices.iter().zip(g) {
                    dx[i] += gv;
                }
            }),
            Op::Sum => acc(inputs[0], &|dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Scale(f) => acc(inputs[0], &|dx| {
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv * f;
                }
            }),
            Op::SoftmaxCrossEntropy { target } => {
                let z = self.nodes[inputs[0].0].value.data();
                let p = softmax_slice(z);
                acc(inputs[0], &|dz| {
                    for (i, (d, pi)) in dz.iter_mut().zip(&p).enumerate() {
                        let t = if i == *target { 1.0 } else { 0.0 };
                        *d += g[0] * (pi - t);
                    }
                });
            }
            Op::BceWithLogits { targets } => {
                let z = self.nodes[inputs[0].0].value.data();
                acc(inputs[0], &|dz| {
                    for ((d, &zv), t) in dz.iter_mut().zip(z).zip(targets) {
                        *d += g[0] * (sigmoid(zv) - t);
                    }
                });
            }
            Op::L1 { targets } => {
                let xv = self.nodes[inputs[0].0].value.data();
                acc(inputs[0], &|dx| {
                    for ((d, x), t) in dx.iter_mut().zip(xv).zip(targets) {
                        let diff = x - t;
                        if diff > 0.0 {
                            *d += g[0];
                        } else if diff < 0.0 {
                            *d -= g[0];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_dims(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output positions `o` along one axis of extent `n_in` whose input
    /// coordinate `o·stride + tap − pad` falls inside `[0, n_in)`.
    fn valid(&self, tap: usize, n_in: usize, n_out: usize) -> std::ops::Range<usize> {
        let lo = if self.pad > tap {
            (self.pad - tap).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if n_in + self.pad > tap {
            ((n_in - 1 + self.pad - tap) / self.stride + 1).min(n_out)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    /// `1×1`, stride 1, no padding: the input already is its column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Column matrix with rows `(i, ky, kx)` and columns the output positions.
    fn im2col<'a>(&self, x: &'a [f64]) -> Cow<'a, [f64]> {
        if self.is_pointwise() {
            return Cow::Borrowed(x);
        }
        let (oh, ow) = self.out_dims();
        let p = oh * ow;
        let k = self.k;
        let mut col = vec![0.0; self.cin * k * k * p];
        for i in 0..self.cin {
            let in_plane = &x[i * self.h * self.w..(i + 1) * self.h * self.w];
            for ky in 0..k {
                let oy_range = self.valid(ky, self.h, oh);
                for kx in 0..k {
                    let r = (i * k + ky) * k + kx;
                    let row = &mut col[r * p..(r + 1) * p];
                    let ox_range = self.valid(kx, self.w, ow);
                    for oy in oy_range.clone() {
                        let in_row = &in_plane[(oy * self.stride + ky - self.pad) * self.w..];
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        for ox in ox_range.clone() {
                            dst[ox] = in_row[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
        Cow::Owned(col)
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients into `dx`.
    fn col2im_add(&self, col: &[f64], dx: &mut [f64]) {
        let (oh, ow) = self.out_dims();
        let p = oh * ow;
        let k = self.k;
        for i in 0..self.cin {
            let plane = &mut dx[i * self.h * self.w..(i + 1) * self.h * self.w];
            for ky in 0..k {
                let oy_range = self.valid(ky, self.h, oh);
                for kx in 0..k {
                    let r = (i * k + ky) * k + kx;
                    let row = &col[r * p..(r + 1) * p];
                    let ox_range = self.valid(kx, self.w, ow);
                    for oy in oy_range.clone() {
                        let base = (oy * self.stride + ky - self.pad) * self.w;
                        let src = &row[oy * ow..(oy + 1) * ow];
                        for ox in ox_range.clone() {
                            plane[base + ox * self.stride + kx - self.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], kern: &[f64], out: &mut [f64]) {
        let (oh, ow) = self.out_dims();
        let p = oh * ow;
        let rows = self.cin * self.k * self.k;
        let col = self.im2col(x);
        for (o, out_row) in out.chunks_exact_mut(p).enumerate() {
            for (r, &wv) in kern[o * rows..(o + 1) * rows].iter().enumerate() {
                axpy(out_row, wv, &col[r * p..(r + 1) * p]);
            }
        }
    }

    fn backward_input(&self, kern: &[f64], g: &[f64], dx: &mut [f64]) {
        let (oh, ow) = self.out_dims();
        let p = oh * ow;
        let rows = self.cin * self.k * self.k;
        let accumulate = |dcol: &mut [f64]| {
            for (r, drow) in dcol.chunks_exact_mut(p).enumerate() {
                for (o, g_row) in g.chunks_exact(p).enumerate() {
                    axpy(drow, kern[o * rows + r], g_row);
                }
            }
        };
        if self.is_pointwise() {
            accumulate(dx);
        } else {
            let mut dcol = vec![0.0; rows * p];
            accumulate(&mut dcol);
            self.col2im_add(&dcol, dx);
        }
    }

    fn backward_kernel(&self, x: &[f64], g: &[f64], dk: &mut [f64]) {
        let (oh, ow) = self.out_dims();
        let p = oh * ow;
        let rows = self.cin * self.k * self.k;
        let col = self.im2col(x);
        for (o, g_row) in g.chunks_exact(p).enumerate() {
            for (r, d) in dk[o * rows..(o + 1) * rows].iter_mut().enumerate() {
                *d += dot(g_row, &col[r * p..(r + 1) * p]);
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with four interleaved partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ac.zip(bc) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_weighted_loss_gives_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.3, -0.7]));
        let y = g.sigmoid(x).unwrap();
        let s = g.sum(y).unwrap();
        let z = g.scale(s, 0.0).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn unreachable_nodes_keep_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0]));
        let b = g.param(Tensor::vector(vec![2.0]));
        let other = g.relu(b).unwrap();
        let loss = g.sum(a).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(b).is_none());
        assert!(g.grad(other).is_none());
        assert!(g.grad(a).is_some());
    }

    #[test]
    fn constants_are_not_differentiated() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = g.param(Tensor::vector(vec![3.0, 4.0]));
        let s = g.add(c, p).unwrap();
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn conv_rejects_nonpositive_extent_and_even_kernels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 2, 2]));
        let k = g.constant(Tensor::zeros([1, 1, 3, 3]));
        assert!(matches!(g.conv2d(x, k, None, 1, 0), Err(Error::Shape(_))));
        let k2 = g.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(matches!(g.conv2d(x, k2, None, 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn first_non_finite_names_scope() {
        let mut g = Graph::new();
        g.set_scope("stage2.block0");
        let x = g.constant(Tensor::vector(vec![f64::INFINITY]));
        let _ = g.relu(x).unwrap();
        let (scope, op) = g.first_non_finite().unwrap();
        assert_eq!(scope, "stage2.block0");
        assert_eq!(op, "leaf");
    }

    #[test]
    fn relu_propagates_nan() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![f64::NAN, -1.0]));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data()[0].is_nan());
        assert_eq!(g.value(y).data()[1], 0.0);
    }
}
