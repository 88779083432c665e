//! The tape: primitive records, eager forward kernels, reverse accumulation.

use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DcgstError, Result};
use crate::graphdata::CsrMatrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Floor used when clamping probabilities before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Spmm {
        m: Rc<CsrMatrix>,
        b: NodeId,
    },
    /// `base · H + sum_p vals[p] * coeff[p] * (E_ij + E_ji) · H` where base
    /// carries the unedited entries and `vals` is an e x 1 column of edge
    /// values. Normalization coefficients are constants.
    SpmmEdited {
        base: Rc<CsrMatrix>,
        pairs: Rc<Vec<(usize, usize)>>,
        coeffs: Rc<Vec<f64>>,
        vals: NodeId,
        h: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    /// ln(max(x, eps)); gradient is zero where the clamp is active.
    Ln(NodeId, f64),
    RowSoftmax(NodeId),
    RowLogSoftmax(NodeId),
    MaskedCrossEntropy {
        logits: NodeId,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<usize>>,
    },
    BceMean {
        p: NodeId,
        targets: Rc<Array2<f64>>,
    },
    MeanRows(NodeId),
    Pow(NodeId, f64),
    L2Norm(NodeId),
    Dropout {
        a: NodeId,
        mask: Rc<Array2<f64>>,
    },
    ConcatRows(NodeId, NodeId),
    GatherRows {
        a: NodeId,
        idx: Rc<Vec<usize>>,
    },
    /// out[i, :] = w[i, 0] * a[i, :]
    RowScale {
        a: NodeId,
        w: NodeId,
    },
    /// Forward rounds half-up to {0, 1}; backward is the identity on the
    /// relaxed operand (straight-through contract).
    StraightThrough(NodeId),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    trainable: bool,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to tape nodes.
pub struct Gradients {
    grads: HashMap<usize, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(&id.0)
    }

    /// Gradient of a parameter, a zero matrix of the given shape if the
    /// parameter never influenced the loss.
    pub fn take(&mut self, id: NodeId, shape: (usize, usize)) -> Array2<f64> {
        self.grads.remove(&id.0).unwrap_or_else(|| Array2::zeros(shape))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_ok(a: (usize, usize), b: (usize, usize)) -> bool {
    a == b || b == (1, 1) || (b.0 == 1 && b.1 == a.1) || (b.1 == 1 && b.0 == a.0)
}

/// Expand `b` to shape `target` under the broadcast rules (same shape, 1x1,
/// row vector 1xd, column vector nx1).
fn broadcast_to(b: &Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    if b.dim() == target {
        return b.clone();
    }
    let mut out = Array2::zeros(target);
    for i in 0..target.0 {
        for j in 0..target.1 {
            let bi = if b.nrows() == 1 { 0 } else { i };
            let bj = if b.ncols() == 1 { 0 } else { j };
            out[[i, j]] = b[[bi, bj]];
        }
    }
    out
}

/// Sum `g` back down to `shape` (adjoint of `broadcast_to`).
fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    if g.dim() == shape {
        return g.clone();
    }
    let mut out = Array2::zeros(shape);
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let bi = if shape.0 == 1 { 0 } else { i };
            let bj = if shape.1 == 1 { 0 } else { j };
            out[[bi, bj]] += g[[i, j]];
        }
    }
    out
}

fn powf_stable(x: f64, k: f64) -> f64 {
    if k.fract() == 0.0 {
        x.powi(k as i32)
    } else {
        x.powf(k)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "node is not scalar-shaped");
        v[[0, 0]]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).dim()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, trainable: bool) -> NodeId {
        let requires_grad = trainable
            || match &op {
                Op::Leaf => false,
                Op::MatMul(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::Mul(a, b)
                | Op::ConcatRows(a, b)
                | Op::RowScale { a, w: b } => self.req(*a) || self.req(*b),
                Op::SpmmEdited { vals, h, .. } => self.req(*vals) || self.req(*h),
                Op::Spmm { b, .. } => self.req(*b),
                Op::Scale(a, _)
                | Op::Relu(a)
                | Op::Sigmoid(a)
                | Op::Clamp(a, _, _)
                | Op::Ln(a, _)
                | Op::RowSoftmax(a)
                | Op::RowLogSoftmax(a)
                | Op::MeanRows(a)
                | Op::Pow(a, _)
                | Op::L2Norm(a)
                | Op::Dropout { a, .. }
                | Op::GatherRows { a, .. }
                | Op::StraightThrough(a) => self.req(*a),
                Op::MaskedCrossEntropy { logits, .. } => self.req(*logits),
                Op::BceMean { p, .. } => self.req(*p),
            };
        self.nodes.push(Node {
            op,
            value,
            trainable,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- leaves -------------------------------------------------------

    pub fn leaf(&mut self, value: Array2<f64>, trainable: bool) -> NodeId {
        self.push(Op::Leaf, value, trainable)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), v))
    }

    // ---- primitives ---------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(DcgstError::Shape(format!(
                "matmul {ar}x{ac} . {br}x{bc}"
            )));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(Op::MatMul(a, b), v, false))
    }

    pub fn spmm(&mut self, m: Rc<CsrMatrix>, b: NodeId) -> Result<NodeId> {
        let (br, _) = self.shape(b);
        if m.n_cols != br {
            return Err(DcgstError::Shape(format!(
                "spmm {}x{} . {br}x?",
                m.n_rows, m.n_cols
            )));
        }
        let v = m.dot(self.value(b));
        Ok(self.push(Op::Spmm { m, b }, v, false))
    }

    /// Sparse product through an edited adjacency. `base` holds the
    /// unedited entries (candidate pairs zeroed out); each pair (i, j)
    /// contributes `vals[p] * coeffs[p]` at (i, j) and (j, i).
    pub fn spmm_edited(
        &mut self,
        base: Rc<CsrMatrix>,
        pairs: Rc<Vec<(usize, usize)>>,
        coeffs: Rc<Vec<f64>>,
        vals: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let (hr, _) = self.shape(h);
        if base.n_cols != hr || pairs.len() != self.shape(vals).0 || self.shape(vals).1 != 1 {
            return Err(DcgstError::Shape(
                "spmm_edited operand shapes do not conform".into(),
            ));
        }
        let mut out = base.dot(self.value(h));
        {
            let hval = self.value(h).clone();
            let vvals = self.value(vals).clone();
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let w = vvals[[p, 0]] * coeffs[p];
                if w == 0.0 {
                    continue;
                }
                for k in 0..hval.ncols() {
                    out[[i, k]] += w * hval[[j, k]];
                    out[[j, k]] += w * hval[[i, k]];
                }
            }
        }
        Ok(self.push(
            Op::SpmmEdited {
                base,
                pairs,
                coeffs,
                vals,
                h,
            },
            out,
            false,
        ))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if !broadcast_ok(self.shape(a), self.shape(b)) {
            return Err(DcgstError::Shape(format!(
                "{name} {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add")?;
        let v = self.value(a) + &broadcast_to(self.value(b), self.shape(a));
        Ok(self.push(Op::Add(a, b), v, false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub")?;
        let v = self.value(a) - &broadcast_to(self.value(b), self.shape(a));
        Ok(self.push(Op::Sub(a, b), v, false))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul")?;
        let v = self.value(a) * &broadcast_to(self.value(b), self.shape(a));
        Ok(self.push(Op::Mul(a, b), v, false))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v, false)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, false)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v, false)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v, false)
    }

    pub fn ln_clamped(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(eps).ln());
        self.push(Op::Ln(a, eps), v, false)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_softmax(self.value(a));
        self.push(Op::RowSoftmax(a), v, false)
    }

    pub fn row_log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = row_log_softmax(self.value(a));
        self.push(Op::RowLogSoftmax(a), v, false)
    }

    /// Mean negative log-likelihood over `mask` rows of the row-softmax of
    /// `logits`, against integer `labels`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Rc<Vec<usize>>,
        mask: Rc<Vec<usize>>,
    ) -> Result<NodeId> {
        if mask.is_empty() {
            return Err(DcgstError::EmptyMask("cross-entropy over empty node set".into()));
        }
        let (n, c) = self.shape(logits);
        if labels.len() != n {
            return Err(DcgstError::Shape(format!(
                "labels length {} vs {n} logit rows",
                labels.len()
            )));
        }
        let ls = row_log_softmax(self.value(logits));
        let mut total = 0.0;
        for &v in mask.iter() {
            if v >= n || labels[v] >= c {
                return Err(DcgstError::Shape(format!("mask node {v} out of range")));
            }
            total -= ls[[v, labels[v]]];
        }
        let v = Array2::from_elem((1, 1), total / mask.len() as f64);
        Ok(self.push(Op::MaskedCrossEntropy { logits, labels, mask }, v, false))
    }

    /// Elementwise binary cross entropy against constant targets with mean
    /// reduction. Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS].
    pub fn bce_mean(&mut self, p: NodeId, targets: Rc<Array2<f64>>) -> Result<NodeId> {
        if self.shape(p) != targets.dim() {
            return Err(DcgstError::Shape(format!(
                "bce {:?} vs {:?}",
                self.shape(p),
                targets.dim()
            )));
        }
        if targets.is_empty() {
            return Err(DcgstError::EmptyMask("bce over empty pair set".into()));
        }
        let n = targets.len() as f64;
        let mut total = 0.0;
        for (x, t) in self.value(p).iter().zip(targets.iter()) {
            let xc = x.clamp(PROB_EPS, 1.0 - PROB_EPS);
            total -= t * xc.ln() + (1.0 - t) * (1.0 - xc).ln();
        }
        let v = Array2::from_elem((1, 1), total / n);
        Ok(self.push(Op::BceMean { p, targets }, v, false))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let val = self.value(a);
        let n = val.nrows() as f64;
        let v = val
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            .mapv(|x| x / n);
        self.push(Op::MeanRows(a), v, false)
    }

    pub fn pow(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).mapv(|x| powf_stable(x, k));
        self.push(Op::Pow(a, k), v, false)
    }

    /// Frobenius norm collapsed to a 1x1 scalar.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Op::L2Norm(a), Array2::from_elem((1, 1), s), false)
    }

    /// Inverted-scale dropout with an explicit rng; rate 0 is the identity.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut ChaCha8Rng) -> NodeId {
        assert!((0.0..1.0).contains(&rate));
        let shape = self.shape(a);
        let mask = if rate == 0.0 {
            Array2::ones(shape)
        } else {
            let keep = 1.0 / (1.0 - rate);
            Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        };
        let mask = Rc::new(mask);
        let v = self.value(a) * mask.as_ref();
        self.push(Op::Dropout { a, mask }, v, false)
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(DcgstError::Shape(format!(
                "concat {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v = concatenate![Axis(0), self.value(a).view(), self.value(b).view()];
        Ok(self.push(Op::ConcatRows(a, b), v, false))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Rc<Vec<usize>>) -> Result<NodeId> {
        let (n, d) = self.shape(a);
        let mut v = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(DcgstError::Shape(format!("gather row {i} out of {n}")));
            }
            v.row_mut(r).assign(&self.value(a).row(i));
        }
        Ok(self.push(Op::GatherRows { a, idx }, v, false))
    }

    /// Weighted row combination: out[i, :] = w[i] * a[i, :].
    pub fn row_scale(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (n, _) = self.shape(a);
        if self.shape(w) != (n, 1) {
            return Err(DcgstError::Shape(format!(
                "row_scale weights {:?}, rows {:?}",
                self.shape(w),
                self.shape(a)
            )));
        }
        let wv = self.value(w).clone();
        let mut v = self.value(a).clone();
        for i in 0..n {
            let s = wv[[i, 0]];
            v.row_mut(i).mapv_inplace(|x| x * s);
        }
        Ok(self.push(Op::RowScale { a, w }, v, false))
    }

    /// Hard rounding with identity backward to the relaxed operand.
    pub fn straight_through(&mut self, s: NodeId) -> NodeId {
        let v = self.value(s).mapv(|x| (x + 0.5).floor());
        self.push(Op::StraightThrough(s), v, false)
    }

    // ---- reverse accumulation ------------------------------------------

    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(DcgstError::Shape(format!(
                "backward from non-scalar node {:?}",
                self.shape(loss)
            )));
        }
        let mut adjoint: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adjoint[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let g = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if self.nodes[idx].trainable {
                // keep the accumulated adjoint for collection below
                adjoint[idx] = Some(g.clone());
            }
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let accum = |adj: &mut Vec<Option<Array2<f64>>>, id: NodeId, delta: Array2<f64>| {
                match &mut adj[id.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.req(*a) {
                        let d = g.dot(&self.nodes[b.0].value.t());
                        accum(&mut adjoint, *a, d);
                    }
                    if self.req(*b) {
                        let d = self.nodes[a.0].value.t().dot(&g);
                        accum(&mut adjoint, *b, d);
                    }
                }
                Op::Spmm { m, b } => {
                    if self.req(*b) {
                        // dB = M^T G
                        let mut d = Array2::zeros(self.shape(*b));
                        for i in 0..m.n_rows {
                            let (cols, vals) = m.row(i);
                            for (&j, &v) in cols.iter().zip(vals) {
                                for k in 0..g.ncols() {
                                    d[[j, k]] += v * g[[i, k]];
                                }
                            }
                        }
                        accum(&mut adjoint, *b, d);
                    }
                }
                Op::SpmmEdited {
                    base,
                    pairs,
                    coeffs,
                    vals,
                    h,
                } => {
                    let hval = &self.nodes[h.0].value;
                    let vvals = &self.nodes[vals.0].value;
                    if self.req(*h) {
                        let mut d = Array2::zeros(hval.dim());
                        for i in 0..base.n_rows {
                            let (cols, bvals) = base.row(i);
                            for (&j, &v) in cols.iter().zip(bvals) {
                                for k in 0..g.ncols() {
                                    d[[j, k]] += v * g[[i, k]];
                                }
                            }
                        }
                        for (p, &(i, j)) in pairs.iter().enumerate() {
                            let w = vvals[[p, 0]] * coeffs[p];
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..g.ncols() {
                                d[[j, k]] += w * g[[i, k]];
                                d[[i, k]] += w * g[[j, k]];
                            }
                        }
                        accum(&mut adjoint, *h, d);
                    }
                    if self.req(*vals) {
                        let mut d = Array2::zeros((pairs.len(), 1));
                        for (p, &(i, j)) in pairs.iter().enumerate() {
                            let mut s = 0.0;
                            for k in 0..g.ncols() {
                                s += g[[i, k]] * hval[[j, k]] + g[[j, k]] * hval[[i, k]];
                            }
                            d[[p, 0]] = coeffs[p] * s;
                        }
                        accum(&mut adjoint, *vals, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.req(*a) {
                        accum(&mut adjoint, *a, g.clone());
                    }
                    if self.req(*b) {
                        accum(&mut adjoint, *b, reduce_to(&g, self.shape(*b)));
                    }
                }
                Op::Sub(a, b) => {
                    if self.req(*a) {
                        accum(&mut adjoint, *a, g.clone());
                    }
                    if self.req(*b) {
                        accum(&mut adjoint, *b, reduce_to(&g, self.shape(*b)).mapv(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.req(*a) {
                        let d = &g * &broadcast_to(&self.nodes[b.0].value, self.shape(*a));
                        accum(&mut adjoint, *a, d);
                    }
                    if self.req(*b) {
                        let d = &g * &self.nodes[a.0].value;
                        accum(&mut adjoint, *b, reduce_to(&d, self.shape(*b)));
                    }
                }
                Op::Scale(a, c) => {
                    if self.req(*a) {
                        accum(&mut adjoint, *a, g.mapv(|x| x * c));
                    }
                }
                Op::Relu(a) => {
                    if self.req(*a) {
                        let x = &self.nodes[a.0].value;
                        let mut d = g.clone();
                        d.zip_mut_with(x, |gi, &xi| {
                            if xi <= 0.0 {
                                *gi = 0.0;
                            }
                        });
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.req(*a) {
                        let y = &self.nodes[idx].value;
                        let d = &g * &y.mapv(|s| s * (1.0 - s));
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if self.req(*a) {
                        let x = &self.nodes[a.0].value;
                        let mut d = g.clone();
                        d.zip_mut_with(x, |gi, &xi| {
                            if xi <= *lo || xi >= *hi {
                                *gi = 0.0;
                            }
                        });
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::Ln(a, eps) => {
                    if self.req(*a) {
                        let x = &self.nodes[a.0].value;
                        let mut d = g.clone();
                        d.zip_mut_with(x, |gi, &xi| {
                            *gi = if xi > *eps { *gi / xi } else { 0.0 };
                        });
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::RowSoftmax(a) => {
                    if self.req(*a) {
                        let y = &self.nodes[idx].value;
                        let mut d = Array2::zeros(y.dim());
                        for i in 0..y.nrows() {
                            let dot: f64 =
                                (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                            for j in 0..y.ncols() {
                                d[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                            }
                        }
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::RowLogSoftmax(a) => {
                    if self.req(*a) {
                        let sm = row_softmax(&self.nodes[a.0].value);
                        let mut d = Array2::zeros(sm.dim());
                        for i in 0..sm.nrows() {
                            let gs: f64 = (0..sm.ncols()).map(|j| g[[i, j]]).sum();
                            for j in 0..sm.ncols() {
                                d[[i, j]] = g[[i, j]] - sm[[i, j]] * gs;
                            }
                        }
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::MaskedCrossEntropy { logits, labels, mask } => {
                    if self.req(*logits) {
                        let gs = g[[0, 0]] / mask.len() as f64;
                        let sm = row_softmax(&self.nodes[logits.0].value);
                        let mut d = Array2::zeros(sm.dim());
                        for &v in mask.iter() {
                            for j in 0..sm.ncols() {
                                d[[v, j]] += gs * sm[[v, j]];
                            }
                            d[[v, labels[v]]] -= gs;
                        }
                        accum(&mut adjoint, *logits, d);
                    }
                }
                Op::BceMean { p, targets } => {
                    if self.req(*p) {
                        let gs = g[[0, 0]] / targets.len() as f64;
                        let pv = &self.nodes[p.0].value;
                        let mut d = Array2::zeros(pv.dim());
                        for ((di, &x), &t) in d.iter_mut().zip(pv.iter()).zip(targets.iter()) {
                            if x > PROB_EPS && x < 1.0 - PROB_EPS {
                                *di = gs * (x - t) / (x * (1.0 - x));
                            }
                        }
                        accum(&mut adjoint, *p, d);
                    }
                }
                Op::MeanRows(a) => {
                    if self.req(*a) {
                        let (n, d_) = self.shape(*a);
                        let mut d = Array2::zeros((n, d_));
                        for i in 0..n {
                            for j in 0..d_ {
                                d[[i, j]] = g[[0, j]] / n as f64;
                            }
                        }
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::Pow(a, k) => {
                    if self.req(*a) {
                        let x = &self.nodes[a.0].value;
                        let d = &g * &x.mapv(|xi| k * powf_stable(xi, k - 1.0));
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::L2Norm(a) => {
                    if self.req(*a) {
                        let y = self.nodes[idx].value[[0, 0]];
                        let gs = g[[0, 0]];
                        let x = &self.nodes[a.0].value;
                        let d = if y == 0.0 {
                            Array2::zeros(x.dim())
                        } else {
                            x.mapv(|xi| gs * xi / y)
                        };
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::Dropout { a, mask } => {
                    if self.req(*a) {
                        accum(&mut adjoint, *a, &g * mask.as_ref());
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (na, _) = self.shape(*a);
                    if self.req(*a) {
                        accum(&mut adjoint, *a, g.slice(ndarray::s![..na, ..]).to_owned());
                    }
                    if self.req(*b) {
                        accum(&mut adjoint, *b, g.slice(ndarray::s![na.., ..]).to_owned());
                    }
                }
                Op::GatherRows { a, idx: rows } => {
                    if self.req(*a) {
                        let mut d = Array2::zeros(self.shape(*a));
                        for (r, &i) in rows.iter().enumerate() {
                            for j in 0..g.ncols() {
                                d[[i, j]] += g[[r, j]];
                            }
                        }
                        accum(&mut adjoint, *a, d);
                    }
                }
                Op::RowScale { a, w } => {
                    let av = &self.nodes[a.0].value;
                    let wv = &self.nodes[w.0].value;
                    if self.req(*a) {
                        let mut d = g.clone();
                        for i in 0..d.nrows() {
                            let s = wv[[i, 0]];
                            d.row_mut(i).mapv_inplace(|x| x * s);
                        }
                        accum(&mut adjoint, *a, d);
                    }
                    if self.req(*w) {
                        let mut d = Array2::zeros((av.nrows(), 1));
                        for i in 0..av.nrows() {
                            d[[i, 0]] = g.row(i).dot(&av.row(i));
                        }
                        accum(&mut adjoint, *w, d);
                    }
                }
                Op::StraightThrough(s) => {
                    if self.req(*s) {
                        accum(&mut adjoint, *s, g.clone());
                    }
                }
            }
        }

        let mut grads = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                if let Some(g) = adjoint[i].take() {
                    grads.insert(i, g);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn row_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

pub(crate) fn row_log_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
