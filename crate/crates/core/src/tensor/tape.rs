//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends a node holding its forward value and the handles
//! of its inputs. Because inputs must already exist when a node is pushed,
//! the node vector is topologically ordered and the backward sweep is a
//! single pass in reverse index order.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Spmm(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Recip(Var),
    RowSoftmax(Var),
    DiagScale {
        x: Var,
        s: Var,
        col: usize,
    },
    ColSum(Var),
    ColSlice(Var, usize),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Dropout(Var, Tensor),
    Mean(Var),
    WeightedNll {
        probs: Var,
        rows: Vec<usize>,
        targets: Vec<usize>,
        weights: Vec<f64>,
        norm: f64,
    },
    #[cfg(test)]
    BrokenTanh(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Probability floor inside the log of the weighted NLL.
const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("primitive `{name}`"),
            });
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records an untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient the backward sweep will report.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul(a, b), t, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(value, Op::Transpose(a), t, "transpose")
    }

    pub fn spmm(&mut self, m: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = m.spmm(self.value(x))?;
        let t = self.tracked(x);
        self.push(value, Op::Spmm(Arc::clone(m), x), t, "spmm")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), t, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Sub(a, b), t, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let t = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul(a, b), t, "mul")
    }

    /// Adds a `1×c` row vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(bias).shape());
        if bs != (1, xs.1) {
            return Err(Error::shape("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let t = self.tracked(x) || self.tracked(bias);
        self.push(value, Op::AddBias(x, bias), t, "add_bias")
    }

    /// `a·x + b` elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Result<Var> {
        let value = self.value(x).map(|v| a * v + b);
        let t = self.tracked(x);
        self.push(value, Op::Affine(x, a), t, "affine")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::tanh);
        let t = self.tracked(x);
        self.push(value, Op::Tanh(x), t, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let t = self.tracked(x);
        self.push(value, Op::Relu(x), t, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        let t = self.tracked(x);
        self.push(value, Op::Sigmoid(x), t, "sigmoid")
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| 1.0 / v);
        let t = self.tracked(x);
        self.push(value, Op::Recip(x), t, "recip")
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let t = self.tracked(x);
        self.push(value, Op::RowSoftmax(x), t, "row_softmax")
    }

    /// `diag(s[:, col]) · x`: scales row `i` of `x` by `s[i, col]`.
    pub fn diag_scale(&mut self, x: Var, s: Var, col: usize) -> Result<Var> {
        let (xs, ss) = (self.value(x).shape(), self.value(s).shape());
        if xs.0 != ss.0 || col >= ss.1 {
            return Err(Error::shape("diag_scale", format!("x {xs:?}, s {ss:?}, col {col}")));
        }
        let mut value = self.value(x).clone();
        for r in 0..xs.0 {
            let w = self.value(s).get(r, col);
            value.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
        let t = self.tracked(x) || self.tracked(s);
        self.push(value, Op::DiagScale { x, s, col }, t, "diag_scale")
    }

    /// Column sums as a `1×c` row.
    pub fn col_sum(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let mut value = Tensor::zeros(1, src.cols());
        for r in 0..src.rows() {
            for (o, v) in value.row_mut(0).iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let t = self.tracked(x);
        self.push(value, Op::ColSum(x), t, "col_sum")
    }

    /// Column `col` of `x` as an `n×1` tensor.
    pub fn col_slice(&mut self, x: Var, col: usize) -> Result<Var> {
        let src = self.value(x);
        if col >= src.cols() {
            return Err(Error::shape("col_slice", format!("col {col} of {:?}", src.shape())));
        }
        let data = (0..src.rows()).map(|r| src.get(r, col)).collect();
        let value = Tensor::from_vec(src.rows(), 1, data)?;
        let t = self.tracked(x);
        self.push(value, Op::ColSlice(x, col), t, "col_slice")
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(Error::shape("select_rows", format!("row {bad} of {:?}", src.shape())));
        }
        let mut data = Vec::with_capacity(rows.len() * src.cols());
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let value = Tensor::from_vec(rows.len(), src.cols(), data)?;
        let t = self.tracked(x);
        self.push(value, Op::SelectRows(x, rows.to_vec()), t, "select_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat_cols", "no inputs")),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), t, "concat_cols")
    }

    /// Multiplies by a precomputed mask. Inverted dropout passes a mask with
    /// entries `0` or `1/keep`.
    pub fn dropout(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        if mask.shape() != self.value(x).shape() {
            return Err(Error::shape("dropout", "mask shape differs from input"));
        }
        let value = self.value(x).zip_map(&mask, |v, m| v * m);
        let t = self.tracked(x);
        self.push(value, Op::Dropout(x, mask), t, "dropout")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let n = src.data().len();
        if n == 0 {
            return Err(Error::shape("mean", "empty input"));
        }
        let value = Tensor::scalar(src.sum() / n as f64);
        let t = self.tracked(x);
        self.push(value, Op::Mean(x), t, "mean")
    }

    /// Weighted negative log-likelihood over the listed rows of a
    /// probability matrix: `Σ w[y_i]·(−ln p[i, y_i]) / Σ w[y_i]`.
    pub fn weighted_nll(&mut self, probs: Var, rows: &[usize], targets: &[usize], weights: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(Error::shape("weighted_nll", "rows/targets length mismatch or empty"));
        }
        let mut total = 0.0;
        let mut norm = 0.0;
        for (&r, &y) in rows.iter().zip(targets) {
            if r >= p.rows() || y >= p.cols() || y >= weights.len() {
                return Err(Error::shape("weighted_nll", format!("row {r} target {y}")));
            }
            let w = weights[y];
            total -= w * p.get(r, y).max(NLL_FLOOR).ln();
            norm += w;
        }
        if norm <= 0.0 {
            return Err(Error::shape("weighted_nll", "class weights sum to zero"));
        }
        let value = Tensor::scalar(total / norm);
        let t = self.tracked(probs);
        let op = Op::WeightedNll {
            probs,
            rows: rows.to_vec(),
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            norm,
        };
        self.push(value, op, t, "weighted_nll")
    }

    #[cfg(test)]
    pub(crate) fn broken_tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::tanh);
        let t = self.tracked(x);
        self.push(value, Op::BrokenTanh(x), t, "broken_tanh")
    }

    /// Runs the reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.value(loss).shape()),
            ));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        // Keep only leaf gradients; interior ones are scratch.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Spmm(m, x) => {
                let gx = m.t_spmm(g)?;
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv);
                let gb = g.zip_map(self.value(*a), |gv, av| gv * av);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.tracked(*bias) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Affine(x, a) => self.accumulate(grads, *x, g.scale(*a)),
            Op::Tanh(x) => {
                let gx = g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv));
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv));
                self.accumulate(grads, *x, gx);
            }
            Op::Recip(x) => {
                let gx = g.zip_map(y, |gv, yv| -gv * yv * yv);
                self.accumulate(grads, *x, gx);
            }
            Op::RowSoftmax(x) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::DiagScale { x, s, col } => {
                let sv = self.value(*s);
                if self.tracked(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let w = sv.get(r, *col);
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= w);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.tracked(*s) {
                    let xv = self.value(*x);
                    let mut gs = Tensor::zeros(sv.rows(), sv.cols());
                    for r in 0..g.rows() {
                        let d: f64 = g.row(r).iter().zip(xv.row(r)).map(|(a, b)| a * b).sum();
                        gs.set(r, *col, d);
                    }
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::ColSum(x) => {
                let rows = self.value(*x).rows();
                let mut gx = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    gx.row_mut(r).copy_from_slice(g.row(0));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ColSlice(x, col) => {
                let (rows, cols) = self.value(*x).shape();
                let mut gx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    gx.set(r, *col, g.get(r, 0));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SelectRows(x, rows) => {
                let (n, cols) = self.value(*x).shape();
                let mut gx = Tensor::zeros(n, cols);
                for (i, &r) in rows.iter().enumerate() {
                    for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.tracked(p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += cols;
                }
            }
            Op::Dropout(x, mask) => {
                self.accumulate(grads, *x, g.zip_map(mask, |gv, m| gv * m));
            }
            Op::Mean(x) => {
                let (rows, cols) = self.value(*x).shape();
                let v = g.get(0, 0) / (rows * cols) as f64;
                self.accumulate(grads, *x, Tensor::filled(rows, cols, v));
            }
            Op::WeightedNll {
                probs,
                rows,
                targets,
                weights,
                norm,
            } => {
                let p = self.value(*probs);
                let mut gp = Tensor::zeros(p.rows(), p.cols());
                let scale = g.get(0, 0) / norm;
                for (&r, &t) in rows.iter().zip(targets) {
                    let pv = p.get(r, t);
                    if pv > NLL_FLOOR {
                        let cur = gp.get(r, t);
                        gp.set(r, t, cur - scale * weights[t] / pv);
                    }
                }
                self.accumulate(grads, *probs, gp);
            }
            #[cfg(test)]
            Op::BrokenTanh(x) => {
                // Deliberately wrong: uses 1 - y instead of 1 - y².
                let gx = g.zip_map(y, |gv, yv| gv * (1.0 - yv));
                self.accumulate(grads, *x, gx);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
