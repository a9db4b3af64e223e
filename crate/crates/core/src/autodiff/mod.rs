//! Minimal define-by-run reverse-mode autodiff.
//!
//! Each builder method on [`Graph`] computes its node's value immediately and
//! records the op and its parents. [`Graph::backward`] walks the record in
//! reverse, leaves every node's gradient in place, and accumulates parameter
//! and AULU beta gradients into the [`ParamStore`].

pub mod kernels;
pub mod optim;
pub mod params;

use thiserror::Error;

use crate::activations::{aulu_dx, aulu_eval, aulu_grad_beta, ActivationSpec, AdaptiveParams};
use crate::tensor::Tensor;
use kernels::ConvDims;

pub use optim::{lr_schedule, sgd_step, OptimError};
pub use params::{ParamId, ParamStore, ParamStoreError};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node {node} ({op}): {detail}")]
    Shape {
        node: NodeId,
        op: &'static str,
        detail: String,
    },
    #[error("backward called before any forward computation")]
    NotForwarded,
    #[error("backward needs a scalar loss, node {node} has shape {shape:?}")]
    NotScalar { node: NodeId, shape: Vec<usize> },
    #[error("no node with id {0}")]
    UnknownNode(NodeId),
    #[error("adaptive site {0} is not present in the parameter store")]
    UnknownSite(usize),
}

/// The nonlinearity carried by an activation node.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationRef {
    Fixed(ActivationSpec),
    /// Index into `ParamStore::adaptive`, with the betas read at forward time.
    Adaptive { site: usize, params: AdaptiveParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// Non-overlapping `k x k` mean over the spatial axes of `[B, C, H, W]`.
    Window(usize),
    /// Mean over the token axis of `[B, P, D]`.
    Tokens,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Param(ParamId),
    MatMul,
    Conv2d,
    Add,
    BiasAdd,
    Activation(ActivationRef),
    MeanPool(Pool),
    Flatten,
    SoftmaxCrossEntropy { labels: Vec<usize> },
    Scale(f64),
    AttentionScores,
    AttentionApply,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul => "matmul",
            Op::Conv2d => "conv2d",
            Op::Add => "add",
            Op::BiasAdd => "bias_add",
            Op::Activation(_) => "activation",
            Op::MeanPool(_) => "mean_pool",
            Op::Flatten => "flatten",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Scale(_) => "scale",
            Op::AttentionScores => "attention_scores",
            Op::AttentionApply => "attention_apply",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub parents: Vec<NodeId>,
    pub value: Tensor,
    /// Filled by [`Graph::backward`].
    pub grad: Option<Tensor>,
    requires_grad: bool,
    /// Softmax probabilities for the loss node.
    saved: Option<Tensor>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id).ok_or(GraphError::UnknownNode(id))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id].grad.as_ref()
    }

    fn next_id(&self) -> NodeId {
        self.nodes.len()
    }

    fn shape_err(&self, op: &'static str, detail: String) -> GraphError {
        GraphError::Shape {
            node: self.next_id(),
            op,
            detail,
        }
    }

    fn push(&mut self, op: Op, parents: Vec<NodeId>, value: Tensor, saved: Option<Tensor>) -> NodeId {
        let requires_grad = match op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::Activation(ActivationRef::Adaptive { .. }) => true,
            _ => parents.iter().any(|&p| self.nodes[p].requires_grad),
        };
        let id = self.next_id();
        self.nodes.push(Node {
            id,
            op,
            parents,
            value,
            grad: None,
            requires_grad,
            saved,
        });
        id
    }

    fn check(&self, id: NodeId) -> Result<&Tensor, GraphError> {
        self.node(id).map(|n| &n.value)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, Vec::new(), value, None)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), Vec::new(), store.value(id).clone(), None)
    }

    /// `[.., k] x [k, n] -> [.., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.rank() < 1 || bv.rank() != 2 || av.shape()[av.rank() - 1] != bv.shape()[0] {
            return Err(self.shape_err(
                "matmul",
                format!("cannot multiply {:?} by {:?}", av.shape(), bv.shape()),
            ));
        }
        let k = bv.shape()[0];
        let n = bv.shape()[1];
        let m = av.len() / k.max(1);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        let value = Tensor::from_vec(shape, out).expect("matmul shape");
        Ok(self.push(Op::MatMul, vec![a, b], value, None))
    }

    /// `x: [B, Ci, H, W]`, `w: [Co, Ci, K, K]` with odd K; stride 1, same padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, GraphError> {
        let (xv, wv) = (self.check(x)?, self.check(w)?);
        let dims = conv_dims(xv.shape(), wv.shape())
            .ok_or_else(|| self.shape_err("conv2d", format!("input {:?} kernel {:?}", xv.shape(), wv.shape())))?;
        let out = kernels::conv2d(xv.data(), wv.data(), dims);
        let value = Tensor::from_vec(vec![dims.batch, dims.c_out, dims.height, dims.width], out)
            .expect("conv shape");
        Ok(self.push(Op::Conv2d, vec![x, w], value, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.shape() != bv.shape() {
            return Err(self.shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        Ok(self.push(Op::Add, vec![a, b], value, None))
    }

    /// Adds `b` broadcast over leading axes. `b` must match a suffix of `x`'s
    /// shape, except that a rank-1 `b` on a rank-4 `x` is a per-channel bias.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (xv, bv) = (self.check(x)?, self.check(b)?);
        let layout = bias_layout(xv.shape(), bv.shape()).ok_or_else(|| {
            self.shape_err("bias_add", format!("bias {:?} on {:?}", bv.shape(), xv.shape()))
        })?;
        let mut value = xv.clone();
        let bias = bv.data();
        match layout {
            BiasLayout::Suffix => {
                for chunk in value.data_mut().chunks_mut(bias.len()) {
                    for (v, b) in chunk.iter_mut().zip(bias) {
                        *v += b;
                    }
                }
            }
            BiasLayout::Channel { plane } => {
                for (i, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
                    let b = bias[i % bias.len()];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        Ok(self.push(Op::BiasAdd, vec![x, b], value, None))
    }

    pub fn activation(&mut self, x: NodeId, act: ActivationRef) -> Result<NodeId, GraphError> {
        let xv = self.check(x)?;
        let value = match &act {
            ActivationRef::Fixed(spec) => spec.batch_eval(xv),
            ActivationRef::Adaptive { params, .. } => xv.map(|v| aulu_eval(v, params)),
        };
        Ok(self.push(Op::Activation(act), vec![x], value, None))
    }

    /// Adaptive activation reading the current betas of `site` from `store`.
    pub fn adaptive_activation(
        &mut self,
        x: NodeId,
        store: &ParamStore,
        site: usize,
    ) -> Result<NodeId, GraphError> {
        let params = *store.adaptive.get(site).ok_or(GraphError::UnknownSite(site))?;
        self.activation(x, ActivationRef::Adaptive { site, params })
    }

    pub fn mean_pool(&mut self, x: NodeId, pool: Pool) -> Result<NodeId, GraphError> {
        let xv = self.check(x)?;
        let s = xv.shape();
        let value = match pool {
            Pool::Window(k) => {
                if s.len() != 4 || k == 0 || s[2] % k != 0 || s[3] % k != 0 {
                    return Err(self.shape_err("mean_pool", format!("window {k} on {s:?}")));
                }
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                let (oh, ow) = (h / k, w / k);
                let mut out = vec![0.0; b * c * oh * ow];
                let scale = 1.0 / (k * k) as f64;
                for (plane_idx, plane) in xv.data().chunks(h * w).enumerate() {
                    let dst = &mut out[plane_idx * oh * ow..(plane_idx + 1) * oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(y / k) * ow + xx / k] += plane[y * w + xx] * scale;
                        }
                    }
                }
                Tensor::from_vec(vec![b, c, oh, ow], out).expect("pool shape")
            }
            Pool::Tokens => {
                if s.len() != 3 || s[1] == 0 {
                    return Err(self.shape_err("mean_pool", format!("token mean on {s:?}")));
                }
                let (b, p, d) = (s[0], s[1], s[2]);
                let mut out = vec![0.0; b * d];
                let scale = 1.0 / p as f64;
                for bi in 0..b {
                    for pi in 0..p {
                        let src = &xv.data()[(bi * p + pi) * d..(bi * p + pi + 1) * d];
                        for (o, v) in out[bi * d..(bi + 1) * d].iter_mut().zip(src) {
                            *o += v * scale;
                        }
                    }
                }
                Tensor::from_vec(vec![b, d], out).expect("pool shape")
            }
        };
        Ok(self.push(Op::MeanPool(pool), vec![x], value, None))
    }

    /// `[B, ...] -> [B, product(...)]`
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let xv = self.check(x)?;
        if xv.rank() < 1 {
            return Err(self.shape_err("flatten", "scalar input".into()));
        }
        let b = xv.shape()[0];
        let rest = xv.shape()[1..].iter().product();
        let value = xv.clone().reshape(vec![b, rest]).expect("flatten");
        Ok(self.push(Op::Flatten, vec![x], value, None))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let value = self.check(x)?.map(|v| v * factor);
        Ok(self.push(Op::Scale(factor), vec![x], value, None))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, GraphError> {
        let lv = self.check(logits)?;
        let s = lv.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(self.shape_err(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(self.shape_err(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        let probs = kernels::softmax_rows(lv.data(), classes);
        let mut loss = 0.0;
        for (row, &label) in lv.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= labels.len() as f64;
        let probs = Tensor::from_vec(s.to_vec(), probs).expect("probs shape");
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                labels: labels.to_vec(),
            },
            vec![logits],
            Tensor::scalar(loss),
            Some(probs),
        ))
    }

    /// Row-softmax of `q k^T` per batch: `[B, P, D] x [B, P, D] -> [B, P, P]`.
    pub fn attention_scores(&mut self, q: NodeId, k: NodeId) -> Result<NodeId, GraphError> {
        let (qv, kv) = (self.check(q)?, self.check(k)?);
        if qv.rank() != 3 || qv.shape() != kv.shape() {
            return Err(self.shape_err(
                "attention_scores",
                format!("q {:?} k {:?}", qv.shape(), kv.shape()),
            ));
        }
        let (b, p, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
        let mut out = Vec::with_capacity(b * p * p);
        for bi in 0..b {
            let qs = &qv.data()[bi * p * d..(bi + 1) * p * d];
            let ks = &kv.data()[bi * p * d..(bi + 1) * p * d];
            let scores = kernels::matmul_bt(qs, ks, p, d, p);
            out.extend(kernels::softmax_rows(&scores, p));
        }
        let value = Tensor::from_vec(vec![b, p, p], out).expect("scores shape");
        Ok(self.push(Op::AttentionScores, vec![q, k], value, None))
    }

    /// `[B, P, P] x [B, P, D] -> [B, P, D]`
    pub fn attention_apply(&mut self, a: NodeId, v: NodeId) -> Result<NodeId, GraphError> {
        let (av, vv) = (self.check(a)?, self.check(v)?);
        let ok = av.rank() == 3
            && vv.rank() == 3
            && av.shape()[0] == vv.shape()[0]
            && av.shape()[1] == av.shape()[2]
            && av.shape()[2] == vv.shape()[1];
        if !ok {
            return Err(self.shape_err(
                "attention_apply",
                format!("weights {:?} values {:?}", av.shape(), vv.shape()),
            ));
        }
        let (b, p, d) = (vv.shape()[0], vv.shape()[1], vv.shape()[2]);
        let mut out = Vec::with_capacity(b * p * d);
        for bi in 0..b {
            let a_b = &av.data()[bi * p * p..(bi + 1) * p * p];
            let v_b = &vv.data()[bi * p * d..(bi + 1) * p * d];
            out.extend(kernels::matmul(a_b, v_b, p, p, d));
        }
        let value = Tensor::from_vec(vec![b, p, d], out).expect("apply shape");
        Ok(self.push(Op::AttentionApply, vec![a, v], value, None))
    }

    /// Reverse sweep from the scalar node `loss`. Parameter gradients are
    /// added to `store` (call [`ParamStore::zero_grad`] first to start fresh).
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::NotForwarded);
        }
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(GraphError::NotScalar {
                node: loss,
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let parent_grads = self.node_backward(node, &g, store)?;
            for (pid, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    match &mut grads[*pid] {
                        Some(acc) => acc.add_assign(&pg),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if let Op::Param(pid) = node.op {
                store.grad_mut(pid).add_assign(&g);
            }
            self.nodes[id].grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.grad.is_none() {
                node.grad = Some(node.value.zeros_like());
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn node_backward(
        &self,
        node: &Node,
        g: &Tensor,
        store: &mut ParamStore,
    ) -> Result<Vec<Option<Tensor>>, GraphError> {
        let parent = |i: usize| &self.nodes[node.parents[i]].value;
        let want = |i: usize| self.wants(node.parents[i]);
        Ok(match &node.op {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul => {
                let (a, b) = (parent(0), parent(1));
                let k = b.shape()[0];
                let n = b.shape()[1];
                let m = a.len() / k.max(1);
                let da = want(0).then(|| {
                    let d = kernels::matmul_bt(g.data(), b.data(), m, n, k);
                    Tensor::from_vec(a.shape().to_vec(), d).expect("matmul grad")
                });
                let db = want(1).then(|| {
                    let d = kernels::matmul_at(a.data(), g.data(), m, k, n);
                    Tensor::from_vec(b.shape().to_vec(), d).expect("matmul grad")
                });
                vec![da, db]
            }
            Op::Conv2d => {
                let (x, w) = (parent(0), parent(1));
                let dims = conv_dims(x.shape(), w.shape()).expect("checked at forward");
                let dx = want(0).then(|| {
                    let d = kernels::conv2d_grad_input(g.data(), w.data(), dims);
                    Tensor::from_vec(x.shape().to_vec(), d).expect("conv grad")
                });
                let dw = want(1).then(|| {
                    let d = kernels::conv2d_grad_kernel(x.data(), g.data(), dims);
                    Tensor::from_vec(w.shape().to_vec(), d).expect("conv grad")
                });
                vec![dx, dw]
            }
            Op::Add => vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())],
            Op::BiasAdd => {
                let (x, b) = (parent(0), parent(1));
                let db = want(1).then(|| {
                    let mut db = b.zeros_like();
                    let n = b.len();
                    match bias_layout(x.shape(), b.shape()).expect("checked at forward") {
                        BiasLayout::Suffix => {
                            for chunk in g.data().chunks(n) {
                                for (d, v) in db.data_mut().iter_mut().zip(chunk) {
                                    *d += v;
                                }
                            }
                        }
                        BiasLayout::Channel { plane } => {
                            for (i, chunk) in g.data().chunks(plane).enumerate() {
                                db.data_mut()[i % n] += chunk.iter().sum::<f64>();
                            }
                        }
                    }
                    db
                });
                vec![want(0).then(|| g.clone()), db]
            }
            Op::Activation(act) => {
                let x = parent(0);
                match act {
                    ActivationRef::Fixed(spec) => {
                        let dx = want(0).then(|| {
                            let d = x.data().iter().zip(g.data()).map(|(&xv, gv)| spec.dx(xv) * gv).collect();
                            Tensor::from_vec(x.shape().to_vec(), d).expect("act grad")
                        });
                        vec![dx]
                    }
                    ActivationRef::Adaptive { site, params } => {
                        let (mut g1, mut g2) = (0.0, 0.0);
                        for (&xv, gv) in x.data().iter().zip(g.data()) {
                            let (b1, b2) = aulu_grad_beta(xv, params);
                            g1 += b1 * gv;
                            g2 += b2 * gv;
                        }
                        let slot = store.adaptive.get_mut(*site).ok_or(GraphError::UnknownSite(*site))?;
                        slot.grad_beta1 += g1;
                        slot.grad_beta2 += g2;
                        let dx = want(0).then(|| {
                            let d = x.data().iter().zip(g.data()).map(|(&xv, gv)| aulu_dx(xv, params) * gv).collect();
                            Tensor::from_vec(x.shape().to_vec(), d).expect("act grad")
                        });
                        vec![dx]
                    }
                }
            }
            Op::MeanPool(pool) => {
                let x = parent(0);
                let s = x.shape();
                let mut dx = x.zeros_like();
                match *pool {
                    Pool::Window(k) => {
                        let (h, w) = (s[2], s[3]);
                        let (oh, ow) = (h / k, w / k);
                        let scale = 1.0 / (k * k) as f64;
                        for (plane_idx, plane) in dx.data_mut().chunks_mut(h * w).enumerate() {
                            let src = &g.data()[plane_idx * oh * ow..(plane_idx + 1) * oh * ow];
                            for y in 0..h {
                                for xx in 0..w {
                                    plane[y * w + xx] = src[(y / k) * ow + xx / k] * scale;
                                }
                            }
                        }
                    }
                    Pool::Tokens => {
                        let (b, p, d) = (s[0], s[1], s[2]);
                        let scale = 1.0 / p as f64;
                        for bi in 0..b {
                            let src = &g.data()[bi * d..(bi + 1) * d];
                            for pi in 0..p {
                                let dst = &mut dx.data_mut()[(bi * p + pi) * d..(bi * p + pi + 1) * d];
                                for (o, v) in dst.iter_mut().zip(src) {
                                    *o = v * scale;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Flatten => {
                let x = parent(0);
                vec![Some(g.clone().reshape(x.shape().to_vec()).expect("flatten grad"))]
            }
            Op::Scale(c) => vec![Some(g.map(|v| v * c))],
            Op::SoftmaxCrossEntropy { labels } => {
                let probs = node.saved.as_ref().expect("softmax saves probabilities");
                let classes = probs.shape()[1];
                let scale = g.item() / labels.len() as f64;
                let mut d = probs.clone();
                for (row, &label) in d.data_mut().chunks_mut(classes).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                vec![Some(d)]
            }
            Op::AttentionScores => {
                let (q, k) = (parent(0), parent(1));
                let a = &node.value;
                let (b, p, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
                let mut dq = Vec::with_capacity(b * p * d);
                let mut dk = Vec::with_capacity(b * p * d);
                for bi in 0..b {
                    let a_b = &a.data()[bi * p * p..(bi + 1) * p * p];
                    let g_b = &g.data()[bi * p * p..(bi + 1) * p * p];
                    let ds = kernels::softmax_rows_backward(a_b, g_b, p);
                    let q_b = &q.data()[bi * p * d..(bi + 1) * p * d];
                    let k_b = &k.data()[bi * p * d..(bi + 1) * p * d];
                    dq.extend(kernels::matmul(&ds, k_b, p, p, d));
                    dk.extend(kernels::matmul_at(&ds, q_b, p, p, d));
                }
                vec![
                    want(0).then(|| Tensor::from_vec(q.shape().to_vec(), dq).expect("dq")),
                    want(1).then(|| Tensor::from_vec(k.shape().to_vec(), dk).expect("dk")),
                ]
            }
            Op::AttentionApply => {
                let (a, v) = (parent(0), parent(1));
                let (b, p, d) = (v.shape()[0], v.shape()[1], v.shape()[2]);
                let mut da = Vec::with_capacity(b * p * p);
                let mut dv = Vec::with_capacity(b * p * d);
                for bi in 0..b {
                    let a_b = &a.data()[bi * p * p..(bi + 1) * p * p];
                    let v_b = &v.data()[bi * p * d..(bi + 1) * p * d];
                    let g_b = &g.data()[bi * p * d..(bi + 1) * p * d];
                    da.extend(kernels::matmul_bt(g_b, v_b, p, d, p));
                    dv.extend(kernels::matmul_at(a_b, g_b, p, p, d));
                }
                vec![
                    want(0).then(|| Tensor::from_vec(a.shape().to_vec(), da).expect("da")),
                    want(1).then(|| Tensor::from_vec(v.shape().to_vec(), dv).expect("dv")),
                ]
            }
        })
    }
}

fn conv_dims(x: &[usize], w: &[usize]) -> Option<ConvDims> {
    if x.len() != 4 || w.len() != 4 || w[1] != x[1] || w[2] != w[3] || w[2].is_multiple_of(2) {
        return None;
    }
    Some(ConvDims {
        batch: x[0],
        c_in: x[1],
        c_out: w[0],
        height: x[2],
        width: x[3],
        kernel: w[2],
    })
}

enum BiasLayout {
    Suffix,
    Channel { plane: usize },
}

fn bias_layout(x: &[usize], b: &[usize]) -> Option<BiasLayout> {
    if x.len() == 4 && b.len() == 1 && b[0] == x[1] {
        return Some(BiasLayout::Channel { plane: x[2] * x[3] });
    }
    if !b.is_empty() && b.len() <= x.len() && x[x.len() - b.len()..] == *b && b.iter().product::<usize>() > 0 {
        return Some(BiasLayout::Suffix);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ulu_dx;
    use crate::verify::{fd_derivative, FdConfig};

    #[test]
    fn zero_logits_give_log_classes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![4, 10]));
        let loss = g.softmax_cross_entropy(x, &[0, 3, 9, 2]).unwrap();
        assert!((g.value(loss).item() - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn activation_of_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1]));
        let y = g
            .activation(x, ActivationRef::Fixed(ActivationSpec::ulu(0.3, 0.8).unwrap()))
            .unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn identity_conv() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(vec![1, 1, 1, 1], 1.0)).unwrap();
        let mut g = Graph::new();
        let data: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = g.input(Tensor::from_vec(vec![1, 1, 4, 4], data.clone()).unwrap());
        let wn = g.param(&store, w);
        let y = g.conv2d(x, wn).unwrap();
        assert_eq!(g.value(y).data(), data.as_slice());
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![4, 2]));
        match g.matmul(a, b) {
            Err(GraphError::Shape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn backward_before_forward() {
        let mut g = Graph::new();
        let mut store = ParamStore::new();
        assert_eq!(g.backward(0, &mut store), Err(GraphError::NotForwarded));
        let x = g.input(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(x, &mut store), Err(GraphError::NotScalar { .. })));
    }

    #[test]
    fn scalar_chain_rule() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(vec![1, 1], 1.0)).unwrap();
        let unused = store.add("unused", Tensor::full(vec![1], 3.0)).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::full(vec![1, 1], 1.0));
        let wn = g.param(&store, w);
        let _ = g.param(&store, unused);
        let z = g.matmul(x, wn).unwrap();
        let y = g
            .activation(z, ActivationRef::Fixed(ActivationSpec::ulu(0.3, 0.8).unwrap()))
            .unwrap();
        store.zero_grad();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.grad(w).item(), ulu_dx(1.0, 0.3, 0.8));
        assert_eq!(store.grad(unused).item(), 0.0);
        for n in g.nodes() {
            assert_eq!(n.grad.as_ref().unwrap().shape(), n.value.shape());
        }
    }

    #[test]
    fn aulu_beta_grad_sums_over_batch() {
        let xs = [-1.3, 0.8];
        let mut store = ParamStore::new();
        store.add_adaptive(AdaptiveParams::new(0.9, -1.1));
        let loss_at = |store: &ParamStore| {
            let mut g = Graph::new();
            let x = g.input(Tensor::from_vec(vec![2], xs.to_vec()).unwrap());
            let y = g.adaptive_activation(x, store, 0).unwrap();
            let w = g.input(Tensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap());
            let s = g.matmul(y, w).unwrap();
            (g, s)
        };
        let (mut g, s) = loss_at(&store);
        store.zero_grad();
        g.backward(s, &mut store).unwrap();
        let p = store.adaptive[0];
        let expected: (f64, f64) = xs
            .iter()
            .map(|&x| aulu_grad_beta(x, &p))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert!((p.grad_beta1 - expected.0).abs() < 1e-15);
        assert!((p.grad_beta2 - expected.1).abs() < 1e-15);
        let cfg = FdConfig::default();
        let fd1 = fd_derivative(
            |b| {
                let mut s2 = store.clone();
                s2.adaptive[0].beta1 = b;
                let (g, s) = loss_at(&s2);
                g.value(s).item()
            },
            p.beta1,
            &cfg,
        );
        assert!(((fd1 - p.grad_beta1) / p.grad_beta1).abs() < 1e-7);
    }

    #[test]
    fn softmax_gradient_closed_form() {
        let logits = vec![0.3, -1.2, 2.0, 0.5, 0.5, -0.4];
        let labels = [2, 0];
        let mut g = Graph::new();
        let mut store = ParamStore::new();
        let id = store
            .add("z", Tensor::from_vec(vec![2, 3], logits.clone()).unwrap())
            .unwrap();
        let z = g.param(&store, id);
        let loss = g.softmax_cross_entropy(z, &labels).unwrap();
        g.backward(loss, &mut store).unwrap();
        let probs = kernels::softmax_rows(&logits, 3);
        for (i, (&p, gv)) in probs.iter().zip(store.grad(id).data()).enumerate() {
            let onehot = if labels[i / 3] == i % 3 { 1.0 } else { 0.0 };
            assert!((gv - (p - onehot) / 2.0).abs() < 1e-15);
        }
        let cfg = FdConfig::default();
        for i in 0..6 {
            let fd = fd_derivative(
                |v| {
                    let mut l = logits.clone();
                    l[i] = v;
                    let mut g = Graph::new();
                    let z = g.input(Tensor::from_vec(vec![2, 3], l).unwrap());
                    let loss = g.softmax_cross_entropy(z, &labels).unwrap();
                    g.value(loss).item()
                },
                logits[i],
                &cfg,
            );
            assert!((fd - store.grad(id).data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_token_attention_is_identity() {
        let mut g = Graph::new();
        let q = g.input(Tensor::from_vec(vec![1, 1, 3], vec![0.4, -2.0, 1.0]).unwrap());
        let a = g.attention_scores(q, q).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
        let v = g.input(Tensor::from_vec(vec![1, 1, 3], vec![5.0, 6.0, 7.0]).unwrap());
        let o = g.attention_apply(a, v).unwrap();
        assert_eq!(g.value(o).data(), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn bias_layouts() {
        let mut store = ParamStore::new();
        let b = store.add("b", Tensor::from_vec(vec![2], vec![1.0, 10.0]).unwrap()).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 2, 2, 2]));
        let bn = g.param(&store, b);
        let y = g.bias_add(x, bn).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 10.0]);
        let x2 = g.input(Tensor::zeros(vec![3, 2]));
        let y2 = g.bias_add(x2, bn).unwrap();
        assert_eq!(g.value(y2).data(), &[1.0, 10.0, 1.0, 10.0, 1.0, 10.0]);
        let x3 = g.input(Tensor::zeros(vec![3, 3]));
        assert!(g.bias_add(x3, bn).is_err());
    }
}
