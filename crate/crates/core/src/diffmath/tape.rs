//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the list once in reverse. Reductions accumulate in index order so
//! results are bitwise reproducible.

use std::sync::Arc;

use super::tensor::{matmul_into, sigmoid, Tensor, SIGMOID_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-compressed sparse matrix used for gathers, pooling and interpolation.
#[derive(Clone, Debug, Default)]
pub struct SparseMatrix {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Append one output row as `(input index, weight)` pairs.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (c, w) in entries {
            debug_assert!(c < self.cols);
            self.col_idx.push(c);
            self.weights.push(w);
        }
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|r| self.row(r).fold(0.0, |acc, (c, w)| acc + w * x[c]))
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Sparse(Var, Arc<SparseMatrix>),
    ConcatCols(Vec<Var>),
    WeightedBce {
        pred: Var,
        target: Arc<[f64]>,
        mask: Option<Arc<[bool]>>,
        gamma: f64,
        eps: f64,
        count: usize,
    },
    MeanSquaredError {
        pred: Var,
        target: Arc<[f64]>,
    },
    MeanAbsError {
        pred: Var,
        target: Arc<[f64]>,
        mask: Option<Arc<[bool]>>,
        norm: f64,
    },
    PairedSqDiff {
        a: Var,
        b: Var,
        pairs: Arc<[(u32, u32)]>,
        norm: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; absent for nodes that do not depend on a
/// trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when `v` never influenced the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(format!("matmul [{n}x{k}] by [{k2}x{m}]")));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            n,
            k,
            m,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2();
        if self.value(bias).len() != m {
            return Err(Error::shape(format!(
                "bias of length {} for width {m}",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddBias(x, bias), rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| c * v, Op::Scale(x, c))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(0.0, |acc, &v| acc + v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().fold(0.0, |acc, &v| acc + v) / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// `y = M x` on the flattened input; the output takes `out_shape`.
    pub fn sparse(&mut self, x: Var, m: Arc<SparseMatrix>, out_shape: &[usize]) -> Result<Var> {
        if self.value(x).len() != m.cols() {
            return Err(Error::shape(format!(
                "sparse map expects {} inputs, got {}",
                m.cols(),
                self.value(x).len()
            )));
        }
        let out = m.apply(self.value(x).data());
        let value = Tensor::new(out_shape.to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Sparse(x, m), rg))
    }

    /// Concatenate 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).dims2().0)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(Error::shape(format!("concat rows {r} vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Mean over the supervised entries of the class-weighted binary cross
    /// entropy; predictions are clamped to `[eps, 1 - eps]`.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        target: Arc<[f64]>,
        mask: Option<Arc<[bool]>>,
        gamma: f64,
        eps: f64,
    ) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || mask.as_ref().is_some_and(|m| m.len() != p.len()) {
            return Err(Error::shape(format!(
                "bce prediction {} vs target {}",
                p.len(),
                target.len()
            )));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..p.len() {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            sum += bce_term(p[i], target[i], gamma, eps);
            count += 1;
        }
        let value = if count == 0 { 0.0 } else { sum / count as f64 };
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::WeightedBce {
                pred,
                target,
                mask,
                gamma,
                eps,
                count,
            },
            rg,
        ))
    }

    /// `(1/n) sum (pred - target)^2`.
    pub fn mse(&mut self, pred: Var, target: Arc<[f64]>) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::shape(format!(
                "mse prediction {} vs target {}",
                p.len(),
                target.len()
            )));
        }
        let mut sum = 0.0;
        for (&a, &b) in p.iter().zip(target.iter()) {
            let d = a - b;
            sum += d * d;
        }
        let value = sum / p.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::MeanSquaredError { pred, target },
            rg,
        ))
    }

    /// `(1/norm) sum |pred - target|` over unmasked entries.
    pub fn mean_abs(
        &mut self,
        pred: Var,
        target: Arc<[f64]>,
        mask: Option<Arc<[bool]>>,
        norm: f64,
    ) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || mask.as_ref().is_some_and(|m| m.len() != p.len()) {
            return Err(Error::shape(format!(
                "l1 prediction {} vs target {}",
                p.len(),
                target.len()
            )));
        }
        let mut sum = 0.0;
        for i in 0..p.len() {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            sum += (p[i] - target[i]).abs();
        }
        let value = if norm > 0.0 { sum / norm } else { 0.0 };
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::MeanAbsError {
                pred,
                target,
                mask,
                norm,
            },
            rg,
        ))
    }

    /// `(1/norm) sum_{(i,j)} (a[i] - b[j])^2`.
    pub fn paired_sq_diff(
        &mut self,
        a: Var,
        b: Var,
        pairs: Arc<[(u32, u32)]>,
        norm: f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut sum = 0.0;
        for &(i, j) in pairs.iter() {
            let (i, j) = (i as usize, j as usize);
            if i >= va.len() || j >= vb.len() {
                return Err(Error::shape(format!(
                    "pair ({i},{j}) outside lengths {} and {}",
                    va.len(),
                    vb.len()
                )));
            }
            let d = va[i] - vb[j];
            sum += d * d;
        }
        let value = if pairs.is_empty() || norm <= 0.0 {
            0.0
        } else {
            sum / norm
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::scalar(value),
            Op::PairedSqDiff { a, b, pairs, norm },
            rg,
        ))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let (_, m) = self.value(*b).dims2();
                if self.rg(*a) {
                    let bv = self.value(*b).data();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += gd[i * m + j] * bv[kk * m + j];
                            }
                            da[i * k + kk] = s;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let av = self.value(*a).data();
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        for kk in 0..k {
                            let aik = av[i * k + kk];
                            let row = &mut db[kk * m..(kk + 1) * m];
                            for (d, &gv) in row.iter_mut().zip(&gd[i * m..(i + 1) * m]) {
                                *d += aik * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.rg(*bias) {
                    let m = self.value(*bias).len();
                    let mut db = vec![0.0; m];
                    for row in gd.chunks(m) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &s)| {
                        // Saturated outputs are clamped and carry no gradient.
                        if s <= SIGMOID_FLOOR || s >= 1.0 - SIGMOID_FLOOR {
                            0.0
                        } else {
                            gv * s * (1.0 - s)
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, gd.iter().map(|v| c * v).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0] / n as f64; n]);
            }
            Op::Sparse(x, m) => {
                let mut d = vec![0.0; m.cols()];
                for (r, &gv) in gd.iter().enumerate() {
                    for (c, w) in m.row(r) {
                        d[c] += w * gv;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.dims2().0;
                let total = node.value.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::WeightedBce {
                pred,
                target,
                mask,
                gamma,
                eps,
                count,
            } => {
                let p = self.value(*pred).data();
                let mut d = vec![0.0; p.len()];
                if *count > 0 {
                    let scale = gd[0] / *count as f64;
                    for i in 0..p.len() {
                        if mask.as_ref().is_some_and(|m| !m[i]) {
                            continue;
                        }
                        let pi = p[i];
                        if pi <= *eps || pi >= 1.0 - *eps {
                            continue;
                        }
                        let v = target[i];
                        d[i] = -scale * (gamma * v / pi - (1.0 - gamma) * (1.0 - v) / (1.0 - pi));
                    }
                }
                self.accumulate(grads, *pred, d);
            }
            Op::MeanSquaredError { pred, target } => {
                let p = self.value(*pred).data();
                let scale = 2.0 * gd[0] / p.len() as f64;
                let d = p
                    .iter()
                    .zip(target.iter())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                self.accumulate(grads, *pred, d);
            }
            Op::MeanAbsError {
                pred,
                target,
                mask,
                norm,
            } => {
                let p = self.value(*pred).data();
                let mut d = vec![0.0; p.len()];
                if *norm > 0.0 {
                    for i in 0..p.len() {
                        if mask.as_ref().is_some_and(|m| !m[i]) {
                            continue;
                        }
                        let diff = p[i] - target[i];
                        if diff != 0.0 {
                            d[i] = gd[0] * diff.signum() / norm;
                        }
                    }
                }
                self.accumulate(grads, *pred, d);
            }
            Op::PairedSqDiff { a, b, pairs, norm } => {
                if pairs.is_empty() || *norm <= 0.0 {
                    return;
                }
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![0.0; va.len()];
                let mut db = vec![0.0; vb.len()];
                let scale = 2.0 * gd[0] / norm;
                for &(i, j) in pairs.iter() {
                    let (i, j) = (i as usize, j as usize);
                    let diff = scale * (va[i] - vb[j]);
                    da[i] += diff;
                    db[j] -= diff;
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
    }
}

/// One voxel's weighted BCE contribution, prediction clamped to `[eps, 1-eps]`.
pub fn bce_term(pred: f64, target: f64, gamma: f64, eps: f64) -> f64 {
    let p = pred.clamp(eps, 1.0 - eps);
    -(gamma * target * p.ln() + (1.0 - gamma) * (1.0 - target) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_two_w() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get_or_zeros(w, &[2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.scale(w, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(Tensor::zeros(&[2, 3]));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn sparse_gather_scatters_back() {
        let mut m = SparseMatrix::new(3);
        m.push_row([(0, 0.5), (2, 0.5)]);
        m.push_row([(1, 2.0)]);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = tape.sparse(x, Arc::new(m), &[2]).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5, 2.0, 0.5]);
    }
}
