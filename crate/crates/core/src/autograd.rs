//! A small reverse-mode automatic differentiation tape over dense `f64`
//! matrices.
//!
//! Every value in the graph is a 2-D array. Scalars are `1 x 1`. The tape is
//! append-only; a node's inputs always have smaller ids than the node itself,
//! which makes reverse iteration a valid topological order.

use ndarray::{s, Array2, Axis};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a trainable parameter inside a [`crate::nn::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One query/key-value pairing of rows inside a fused attention op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub kv_start: usize,
    pub kv_len: usize,
}

impl AttnSegment {
    /// Self-attention over rows `start..start+len`.
    pub fn square(start: usize, len: usize) -> Self {
        Self {
            q_start: start,
            q_len: len,
            kv_start: start,
            kv_len: len,
        }
    }
}

const LN_EPS: f64 = 1e-6;
const NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    MatMulTN(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulConst(NodeId, Array2<f64>),
    Scale(NodeId, f64),
    Square(NodeId),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    L2NormalizeRows {
        x: NodeId,
        norms: Vec<f64>,
    },
    StandardizeCols {
        x: NodeId,
        denom: Vec<f64>,
        floored: Vec<bool>,
    },
    SumAll(NodeId),
    MeanRows(NodeId),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: Vec<AttnSegment>,
        probs: Vec<Array2<f64>>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// The computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    param_nodes: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }

    /// Gradient for every parameter that took part in the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> + '_ {
        self.param_nodes
            .iter()
            .filter_map(|(p, n)| self.grads[n.0].as_ref().map(|g| (*p, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.param_nodes
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.grads[n.0].as_ref())
    }
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

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            _ => op_inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Trainable leaf. Repeated calls with the same id return the same node.
    pub fn param(&mut self, id: ParamId, value: &Array2<f64>) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        let n = self.push(value.clone(), Op::Param);
        self.params.insert(id, n);
        n
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).t().dot(self.value(b));
        self.push(v, Op::MatMulTN(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a `1 x d` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_const(&mut self, a: NodeId, c: Array2<f64>) -> NodeId {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `1 x d` gamma and beta.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        softmax_rows_inplace(&mut v);
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Numerically stable row-wise log-softmax (max-logit subtraction).
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let mut norms = Vec::with_capacity(v.nrows());
        for mut row in v.rows_mut() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        self.push(v, Op::L2NormalizeRows { x: a, norms })
    }

    /// Column standardization `(x - mean) / max(std, eps)` with population std.
    pub fn standardize_cols(&mut self, a: NodeId, eps: f64) -> NodeId {
        let mut v = self.value(a).clone();
        let n = v.nrows() as f64;
        let mut denom = Vec::with_capacity(v.ncols());
        let mut floored = Vec::with_capacity(v.ncols());
        for mut col in v.columns_mut() {
            let mean = col.sum() / n;
            col.mapv_inplace(|x| x - mean);
            let std = (col.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            let d = std.max(eps);
            col.mapv_inplace(|x| x / d);
            denom.push(d);
            floored.push(std < eps);
        }
        self.push(
            v,
            Op::StandardizeCols {
                x: a,
                denom,
                floored,
            },
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows, producing a `1 x d` row.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Sum of several nodes of identical shape.
    pub fn sum_nodes(&mut self, parts: &[NodeId]) -> NodeId {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Multi-head scaled dot-product attention. Heads split the columns of
    /// `q`, `k`, `v` into equal blocks; each segment attends only within its
    /// own row ranges. Rows of `q` outside every segment produce zeros.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        segments: Vec<AttnSegment>,
    ) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(d % heads, 0, "dim not divisible by heads");
        assert_eq!(kv.ncols(), d);
        assert_eq!(vv.ncols(), d);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in &segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![seg.q_start..seg.q_start + seg.q_len, cols.clone()]);
                let ks = kv.slice(s![seg.kv_start..seg.kv_start + seg.kv_len, cols.clone()]);
                let vs = vv.slice(s![seg.kv_start..seg.kv_start + seg.kv_len, cols.clone()]);
                let mut a = qs.dot(&ks.t()) * scale;
                softmax_rows_inplace(&mut a);
                let o = a.dot(&vs);
                out.slice_mut(s![seg.q_start..seg.q_start + seg.q_len, cols])
                    .assign(&o);
                probs.push(a);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            },
        )
    }

    /// Full backward pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        self.backward_until(loss, None)
    }

    /// Backward pass from `loss` that stops once the gradient at `stop` is
    /// complete; nodes created before `stop` are not visited.
    pub fn backward_until(&self, loss: NodeId, stop: Option<NodeId>) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let floor = stop.map(|s| s.0 + 1).unwrap_or(0);
        for i in (floor..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut param_nodes: Vec<(ParamId, NodeId)> = self.params.iter().map(|(p, n)| (*p, *n)).collect();
        param_nodes.sort_unstable();
        Gradients { grads, param_nodes }
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, delta: Array2<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.dot(val(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, g.t().dot(val(*a)));
                }
            }
            Op::MatMulTN(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, val(*b).dot(&g.t()));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, val(*a).dot(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::MulConst(a, c) => acc(*a, g * c),
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Square(a) => acc(*a, g * &(val(*a) * 2.0)),
            Op::Gelu(a) => {
                let mut d = val(*a).mapv(|x| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
                });
                d *= g;
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.nodes[gamma.0].requires_grad {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.nodes[beta.0].requires_grad {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.nodes[x.0].requires_grad {
                    let dxhat = g * val(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for (r, ((mut out, dh), xh)) in dx
                        .rows_mut()
                        .into_iter()
                        .zip(dxhat.rows())
                        .zip(xhat.rows())
                        .enumerate()
                    {
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                        let is = inv_std[r];
                        for j in 0..out.len() {
                            out[j] = is / d * (d * dh[j] - sum_dh - xh[j] * sum_dh_xh);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let mut dx = g * s;
                for (mut row, srow) in dx.rows_mut().into_iter().zip(s.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&srow, |r, &sv| *r -= sv * dot);
                }
                acc(*a, dx);
            }
            Op::LogSoftmaxRows(a) => {
                let mut dx = g.clone();
                for (mut row, lrow) in dx.rows_mut().into_iter().zip(node.value.rows()) {
                    let total = row.sum();
                    row.zip_mut_with(&lrow, |r, &l| *r -= l.exp() * total);
                }
                acc(*a, dx);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut dx = g.clone();
                for (r, (mut row, yrow)) in dx.rows_mut().into_iter().zip(y.rows()).enumerate() {
                    let dot = row.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>();
                    let n = norms[r];
                    row.zip_mut_with(&yrow, |gv, &yv| *gv = (*gv - yv * dot) / n);
                }
                acc(*x, dx);
            }
            Op::StandardizeCols { x, denom, floored } => {
                let y = &node.value;
                let n = y.nrows() as f64;
                let mut dx = g.clone();
                for (j, (mut col, ycol)) in dx.columns_mut().into_iter().zip(y.columns()).enumerate() {
                    let mean_g = col.sum() / n;
                    let mean_gy = if floored[j] {
                        0.0
                    } else {
                        col.iter().zip(ycol.iter()).map(|(a, b)| a * b).sum::<f64>() / n
                    };
                    let d = denom[j];
                    col.zip_mut_with(&ycol, |gv, &yv| *gv = (*gv - mean_g - yv * mean_gy) / d);
                }
                acc(*x, dx);
            }
            Op::SumAll(a) => {
                let gv = g[[0, 0]];
                acc(*a, Array2::from_elem(val(*a).dim(), gv));
            }
            Op::MeanRows(a) => {
                let (n, d) = val(*a).dim();
                let row = g.row(0).mapv(|x| x / n as f64);
                let full = row.broadcast((n, d)).expect("broadcast").to_owned();
                acc(*a, full);
            }
            Op::SliceRows(a, start) => {
                let mut full = Array2::zeros(val(*a).dim());
                full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, full);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).nrows();
                    acc(*p, g.slice(s![offset..offset + n, ..]).to_owned());
                    offset += n;
                }
            }
            Op::GatherRows(a, idx) => {
                let mut full = Array2::zeros(val(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut dst = full.row_mut(src);
                    dst += &g.row(r);
                }
                acc(*a, full);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let d = qv.ncols();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Array2::zeros(qv.dim());
                let mut dk = Array2::zeros(kv.dim());
                let mut dv = Array2::zeros(vv.dim());
                let mut pi = 0;
                for seg in segments {
                    let qr = seg.q_start..seg.q_start + seg.q_len;
                    let kr = seg.kv_start..seg.kv_start + seg.kv_len;
                    for h in 0..*heads {
                        let cols = h * dh..(h + 1) * dh;
                        let a = &probs[pi];
                        pi += 1;
                        let go = g.slice(s![qr.clone(), cols.clone()]);
                        let vs = vv.slice(s![kr.clone(), cols.clone()]);
                        let qs = qv.slice(s![qr.clone(), cols.clone()]);
                        let ks = kv.slice(s![kr.clone(), cols.clone()]);
                        let mut dvs = dv.slice_mut(s![kr.clone(), cols.clone()]);
                        dvs += &a.t().dot(&go);
                        let da = go.dot(&vs.t());
                        let mut dsc = &da * a;
                        for (mut row, arow) in dsc.rows_mut().into_iter().zip(a.rows()) {
                            let dot = row.sum();
                            row.zip_mut_with(&arow, |r, &av| *r -= av * dot);
                        }
                        dsc *= scale;
                        let mut dqs = dq.slice_mut(s![qr.clone(), cols.clone()]);
                        dqs += &dsc.dot(&ks);
                        let mut dks = dk.slice_mut(s![kr.clone(), cols.clone()]);
                        dks += &dsc.t().dot(&qs);
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Leaf | Op::Param => vec![],
        Op::MatMul(a, b)
        | Op::MatMulT(a, b)
        | Op::MatMulTN(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b) => vec![*a, *b],
        Op::MulConst(a, _)
        | Op::Scale(a, _)
        | Op::Square(a)
        | Op::Gelu(a)
        | Op::SoftmaxRows(a)
        | Op::LogSoftmaxRows(a)
        | Op::SumAll(a)
        | Op::MeanRows(a)
        | Op::SliceRows(a, _)
        | Op::GatherRows(a, _) => vec![*a],
        Op::L2NormalizeRows { x, .. } | Op::StandardizeCols { x, .. } => vec![*x],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ConcatRows(parts) => parts.clone(),
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
    }
}

pub(crate) fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        row.mapv_inplace(|x| (x - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
}
