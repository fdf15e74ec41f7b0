//! Reverse-mode gradients over the primitives the language model needs.
//!
//! A [`Graph`] is the computation record: every method evaluates its
//! primitive immediately, appends the result, and returns a [`NodeId`].
//! Node ids only ever point backwards, so the record is topologically
//! ordered by construction. Gradients are produced only for leaves whose
//! [`ParamKey`] is in the graph's trainable set; everything else is a
//! constant and never gets gradient storage.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::numerics::ops::{self, PROB_FLOOR};
use crate::numerics::{Matrix, Scalar};

/// Identifier of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf(Option<ParamKey>),
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MaskMul(NodeId, Matrix<S>),
    Gather { table: NodeId, ids: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    SliceRows { src: NodeId, start: usize },
    SliceCols { src: NodeId, start: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, stats: Vec<(S, S)> },
    Gelu(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<Matrix<S>>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Matrix<S>,
        clamped: Vec<bool>,
    },
    Sum(NodeId),
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Matrix<S>>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    trainable: BTreeSet<ParamKey>,
    layer_norm_eps: S,
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new(trainable: impl IntoIterator<Item = ParamKey>) -> Self {
        Self {
            nodes: Vec::new(),
            trainable: trainable.into_iter().collect(),
            layer_norm_eps: S::from_f64_lossy(1e-5),
        }
    }

    /// A record that never computes gradients (scoring).
    pub fn inference() -> Self {
        Self::new([])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<S> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Cow<'a, Matrix<S>>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn constant(&mut self, value: &'a Matrix<S>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf(None), false)
    }

    pub fn constant_owned(&mut self, value: Matrix<S>) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf(None), false)
    }

    /// A parameter leaf; it receives gradients iff `key` is trainable.
    pub fn param(&mut self, value: &'a Matrix<S>, key: ParamKey) -> NodeId {
        let grad = self.trainable.contains(&key);
        self.push(Cow::Borrowed(value), Op::Leaf(Some(key)), grad)
    }

    pub fn param_owned(&mut self, value: Matrix<S>, key: ParamKey) -> NodeId {
        let grad = self.trainable.contains(&key);
        self.push(Cow::Owned(value), Op::Leaf(Some(key)), grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let value = self.value(a).matmul_t(false, self.value(b), trans_b)?;
        let grad = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::MatMul { a, b, trans_b }, grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let grad = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::Add(a, b), grad))
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::shape(format!(
                "add_row {:?} + {:?}",
                x.shape(),
                r.shape()
            )));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (v, &b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *v = *v + b;
            }
        }
        let grad = self.any_grad(&[a, row]);
        Ok(self.push(Cow::Owned(value), Op::AddRow(a, row), grad))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let value = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect(),
        )?;
        let grad = self.any_grad(&[a, b]);
        Ok(self.push(Cow::Owned(value), Op::Mul(a, b), grad))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: NodeId, mask: Matrix<S>) -> Result<NodeId> {
        let x = self.value(a);
        if x.shape() != mask.shape() {
            return Err(Error::shape("mask shape"));
        }
        let value = Matrix::from_vec(
            x.rows(),
            x.cols(),
            x.data().iter().zip(mask.data()).map(|(&p, &q)| p * q).collect(),
        )?;
        let grad = self.any_grad(&[a]);
        Ok(self.push(Cow::Owned(value), Op::MaskMul(a, mask), grad))
    }

    /// Rows `ids` of `table`, in order.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: t.rows(),
                });
            }
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        let grad = self.any_grad(&[table]);
        Ok(self.push(
            Cow::Owned(value),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            grad,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&mats)?;
        let grad = self.any_grad(parts);
        Ok(self.push(Cow::Owned(value), Op::ConcatRows(parts.to_vec()), grad))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let x = self.value(src);
        if start > end || end > x.rows() {
            return Err(Error::shape(format!("slice rows {start}..{end} of {}", x.rows())));
        }
        let value = x.slice_rows(start, end);
        let grad = self.any_grad(&[src]);
        Ok(self.push(Cow::Owned(value), Op::SliceRows { src, start }, grad))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let x = self.value(src);
        if start > end || end > x.cols() {
            return Err(Error::shape(format!("slice cols {start}..{end} of {}", x.cols())));
        }
        let value = x.slice_cols(start, end);
        let grad = self.any_grad(&[src]);
        Ok(self.push(Cow::Owned(value), Op::SliceCols { src, start }, grad))
    }

    /// Row-wise layer normalization with `1×cols` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        if g.shape() != (1, xv.cols()) || b.shape() != (1, xv.cols()) {
            return Err(Error::shape("layer_norm gain/bias must be 1 x cols"));
        }
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        let mut stats = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            stats.push(ops::layer_norm_row(
                xv.row(r),
                g.data(),
                b.data(),
                self.layer_norm_eps,
                value.row_mut(r),
            ));
        }
        let grad = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            Cow::Owned(value),
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
            grad,
        ))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(ops::gelu);
        let grad = self.any_grad(&[a]);
        self.push(Cow::Owned(value), Op::Gelu(a), grad)
    }

    /// Multi-head attention; see [`ops::multi_head_attention`] for the mask.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        n_prefix: usize,
        q_offset: usize,
    ) -> Result<NodeId> {
        let (value, probs) = ops::multi_head_attention(
            self.value(q),
            self.value(k),
            self.value(v),
            heads,
            n_prefix,
            q_offset,
        )?;
        let grad = self.any_grad(&[q, k, v]);
        Ok(self.push(
            Cow::Owned(value),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            grad,
        ))
    }

    /// Summed clamped negative log-likelihood of `targets` under the row-wise
    /// softmax of `logits`. Rows whose target is `None` contribute nothing.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let z = self.value(logits);
        if z.rows() != targets.len() {
            return Err(Error::shape(format!(
                "{} logit rows vs {} targets",
                z.rows(),
                targets.len()
            )));
        }
        let cap = S::from_f64_lossy(-PROB_FLOOR.ln());
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut clamped = vec![false; z.rows()];
        let mut total = S::zero();
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= z.cols() {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    len: z.cols(),
                });
            }
            let mut logp = z.row(r).to_vec();
            ops::log_softmax_in_place(&mut logp);
            let nll = -logp[t];
            if nll > cap {
                clamped[r] = true;
                total = total + cap;
            } else {
                total = total + nll;
            }
            for (p, lp) in probs.row_mut(r).iter_mut().zip(logp) {
                *p = lp.exp();
            }
        }
        let grad = self.any_grad(&[logits]);
        Ok(self.push(
            Cow::Owned(Matrix::scalar(total)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                clamped,
            },
            grad,
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        let grad = self.any_grad(&[a]);
        self.push(Cow::Owned(value), Op::Sum(a), grad)
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        let loss_value = self.value(loss);
        if loss_value.shape() != (1, 1) {
            return Err(Error::Graph(format!(
                "loss must be scalar, got {:?}",
                loss_value.shape()
            )));
        }
        let recorded: BTreeMap<ParamKey, (usize, usize)> = self
            .nodes
            .iter()
            .filter(|n| n.requires_grad)
            .filter_map(|n| match n.op {
                Op::Leaf(Some(key)) => Some((key, n.value.shape())),
                _ => None,
            })
            .collect();
        if recorded.is_empty() {
            return Err(Error::Graph("no trainable leaves in the record".into()));
        }

        let mut grads: Vec<Option<Matrix<S>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(S::one()));

        let mut out: BTreeMap<ParamKey, Matrix<S>> = recorded
            .iter()
            .map(|(&k, &(r, c))| (k, Matrix::zeros(r, c)))
            .collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut out)?;
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node<'a, S>,
        g: &Matrix<S>,
        grads: &mut [Option<Matrix<S>>],
        out: &mut BTreeMap<ParamKey, Matrix<S>>,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf(key) => {
                if let Some(slot) = key.as_ref().and_then(|k| out.get_mut(k)) {
                    slot.add_assign(g);
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, g.matmul_t(false, bv, !trans_b)?);
                }
                if self.wants(*b) {
                    let gb = if *trans_b {
                        g.matmul_t(true, av, false)?
                    } else {
                        av.matmul_t(true, g, false)?
                    };
                    accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.wants(id) {
                        accumulate(grads, id, g.clone());
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*row) {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, &v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *acc = *acc + v;
                        }
                    }
                    accumulate(grads, *row, gr);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, elementwise(g, bv));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, elementwise(g, av));
                }
            }
            Op::MaskMul(a, mask) => {
                if self.wants(*a) {
                    accumulate(grads, *a, elementwise(g, mask));
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (acc, &v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *acc = *acc + v;
                        }
                    }
                    accumulate(grads, *table, gt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.wants(p) {
                        accumulate(grads, p, g.slice_rows(start, start + rows));
                    }
                    start += rows;
                }
            }
            Op::SliceRows { src, start } => {
                if self.wants(*src) {
                    let s = self.value(*src);
                    let mut gs = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..g.rows() {
                        gs.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(grads, *src, gs);
                }
            }
            Op::SliceCols { src, start } => {
                if self.wants(*src) {
                    let s = self.value(*src);
                    let mut gs = Matrix::zeros(s.rows(), s.cols());
                    for r in 0..g.rows() {
                        gs.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(grads, *src, gs);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => self.layer_norm_backward(*x, *gain, *bias, stats, g, grads),
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let gx = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&gv, &xv)| gv * ops::gelu_grad(xv))
                            .collect(),
                    )?;
                    accumulate(grads, *a, gx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, g, grads)?,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                clamped,
            } => {
                if self.wants(*logits) {
                    let upstream = g.data()[0];
                    let mut gz = Matrix::zeros(probs.rows(), probs.cols());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        if clamped[r] {
                            continue;
                        }
                        let row = gz.row_mut(r);
                        row.copy_from_slice(probs.row(r));
                        row[t] = row[t] - S::one();
                        row.iter_mut().for_each(|v| *v = *v * upstream);
                    }
                    accumulate(grads, *logits, gz);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    accumulate(grads, *a, Matrix::filled(r, c, g.data()[0]));
                }
            }
        }
        Ok(())
    }

    fn layer_norm_backward(
        &self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        stats: &[(S, S)],
        g: &Matrix<S>,
        grads: &mut [Option<Matrix<S>>],
    ) {
        let xv = self.value(x);
        let gv = self.value(gain);
        let n = xv.cols();
        let nf = S::from_usize(n).unwrap();
        let mut dx = Matrix::zeros(xv.rows(), n);
        let mut dgain = Matrix::zeros(1, n);
        let mut dbias = Matrix::zeros(1, n);
        let mut xhat = vec![S::zero(); n];
        let mut dxhat = vec![S::zero(); n];
        for r in 0..xv.rows() {
            let (mean, rstd) = stats[r];
            let gr = g.row(r);
            for i in 0..n {
                xhat[i] = (xv[(r, i)] - mean) * rstd;
                dxhat[i] = gr[i] * gv.data()[i];
                dgain[(0, i)] = dgain[(0, i)] + gr[i] * xhat[i];
                dbias[(0, i)] = dbias[(0, i)] + gr[i];
            }
            let mean_d = dxhat.iter().copied().sum::<S>() / nf;
            let mean_dx = dxhat
                .iter()
                .zip(&xhat)
                .map(|(&a, &b)| a * b)
                .sum::<S>()
                / nf;
            for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
            }
        }
        if self.wants(x) {
            accumulate(grads, x, dx);
        }
        if self.wants(gain) {
            accumulate(grads, gain, dgain);
        }
        if self.wants(bias) {
            accumulate(grads, bias, dbias);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[Matrix<S>],
        g: &Matrix<S>,
        grads: &mut [Option<Matrix<S>>],
    ) -> Result<()> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / heads;
        let scale = S::from_usize(dh).unwrap().sqrt().recip();
        let mut dq = Matrix::zeros(qv.rows(), d);
        let mut dk = Matrix::zeros(kv.rows(), d);
        let mut dv = Matrix::zeros(vv.rows(), d);
        for (h, p) in probs.iter().enumerate() {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let go = g.slice_cols(lo, hi);
            let vh = vv.slice_cols(lo, hi);
            let dvh = p.matmul_t(true, &go, false)?;
            let mut ds = go.matmul_t(false, &vh, true)?;
            for i in 0..ds.rows() {
                let pr = p.row(i);
                let dot = ds.row(i).iter().zip(pr).map(|(&a, &b)| a * b).sum::<S>();
                for (s, &pv) in ds.row_mut(i).iter_mut().zip(pr) {
                    *s = pv * (*s - dot) * scale;
                }
            }
            let dqh = ds.matmul(&kv.slice_cols(lo, hi))?;
            let dkh = ds.matmul_t(true, &qv.slice_cols(lo, hi), false)?;
            for (dst, src) in [(&mut dq, &dqh), (&mut dk, &dkh), (&mut dv, &dvh)] {
                for r in 0..src.rows() {
                    dst.row_mut(r)[lo..hi].copy_from_slice(src.row(r));
                }
            }
        }
        for (id, m) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(id) {
                accumulate(grads, id, m);
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Matrix<S>>], id: NodeId, m: Matrix<S>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&m),
        slot @ None => *slot = Some(m),
    }
}

fn elementwise<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect(),
    )
    .expect("shapes checked at record time")
}

/// Gradients for every trainable leaf present in a record.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: BTreeMap<ParamKey, Matrix<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, key: ParamKey) -> Result<&Matrix<S>> {
        self.grads
            .get(&key)
            .ok_or_else(|| Error::Graph(format!("leaf {key:?} not in record")))
    }

    pub fn contains(&self, key: ParamKey) -> bool {
        self.grads.contains_key(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &Matrix<S>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Adds another set of gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        for (k, v) in &other.grads {
            match self.grads.get_mut(k) {
                Some(existing) => existing.add_assign(v),
                None => {
                    self.grads.insert(*k, v.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for v in self.grads.values_mut() {
            v.scale_assign(factor);
        }
    }
}
