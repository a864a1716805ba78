//! Append-only tape of dense matrix operations with a reverse sweep.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::sparse::{spmm_blocks, DenseMatrix, SparseMatrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Absolute,
    Squared,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    /// Block-wise product with a constant sparse matrix; holds its transpose
    /// for the adjoint.
    Spmm(Var, Arc<SparseMatrix>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    AddRowBroadcast(Var, Var),
    Sum(Var),
    Mean(Var),
    /// Scalar whose gradient with respect to the input was fixed when the
    /// value was computed (masked error sums).
    Linearized(Var, DenseMatrix),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::DimensionMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records the current value of a parameter; gradients flowing into the
    /// returned var accumulate into that parameter on [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        let v = self.value(neg).map(|x| x + 1.0);
        // the additive constant has no gradient, so reuse the scale node's adjoint
        self.push(v, Op::Scale(neg, 1.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Applies the constant matrix `p` to each consecutive block of
    /// `p.n_cols()` rows of `x`. `p_transpose` must equal `pᵀ`.
    pub fn spmm(&mut self, p: &SparseMatrix, p_transpose: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let v = spmm_blocks(p, self.value(x))?;
        Ok(self.push(v, Op::Spmm(x, Arc::clone(p_transpose))))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = DenseMatrix::hcat(&mats)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Adds the `1 × C` row `bias` to every row of the `R × C` matrix `a`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.n_rows() != 1 || b.n_cols() != x.n_cols() {
            return Err(mismatch("add_row_broadcast", x, b));
        }
        let mut v = x.clone();
        for r in 0..v.n_rows() {
            for (d, &s) in v.row_mut(r).iter_mut().zip(b.row(0)) {
                *d += s;
            }
        }
        Ok(self.push(v, Op::AddRowBroadcast(a, bias)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(DenseMatrix::filled(1, 1, s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = m.as_slice().len().max(1) as f64;
        let s = m.sum() / n;
        self.push(DenseMatrix::filled(1, 1, s), Op::Mean(a))
    }

    /// `Σ mask · err(pred - target)` as a `1 × 1` scalar, where `err` is the
    /// absolute or squared difference. `mask` entries are weights, normally
    /// 0 or 1; `target` and `mask` are constants.
    pub fn masked_error_sum(
        &mut self,
        pred: Var,
        target: &DenseMatrix,
        mask: &DenseMatrix,
        kind: ErrorKind,
    ) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(mismatch("masked_error_sum", p, target));
        }
        if p.shape() != mask.shape() {
            return Err(mismatch("masked_error_sum", p, mask));
        }
        let mut grad = DenseMatrix::zeros(p.n_rows(), p.n_cols());
        let mut total = 0.0;
        for (((g, &x), &t), &w) in grad
            .as_mut_slice()
            .iter_mut()
            .zip(p.as_slice())
            .zip(target.as_slice())
            .zip(mask.as_slice())
        {
            if w == 0.0 {
                continue;
            }
            let d = x - t;
            match kind {
                ErrorKind::Absolute => {
                    total += w * d.abs();
                    *g = if d > 0.0 {
                        w
                    } else if d < 0.0 {
                        -w
                    } else {
                        0.0
                    };
                }
                ErrorKind::Squared => {
                    total += w * d * d;
                    *g = 2.0 * w * d;
                }
            }
        }
        Ok(self.push(DenseMatrix::filled(1, 1, total), Op::Linearized(pred, grad)))
    }

    /// Reverse sweep from `loss`, accumulating `∂loss/∂param` into the grad
    /// buffers of `store`. Clears the tape afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let result = self.backward_inner(loss, store);
        self.clear();
        result
    }

    fn backward_inner(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.n_rows(),
                cols: lv.n_cols(),
            });
        }
        let mut grads: Vec<Option<DenseMatrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let check = |v: &Var| -> Result<()> {
                if v.0 >= i {
                    Err(Error::TapeOrder(i))
                } else {
                    Ok(())
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    store.get_mut(*id).grad.axpy(1.0, &g)?;
                }
                Op::Add(a, b) => {
                    check(a)?;
                    check(b)?;
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    check(a)?;
                    check(b)?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    check(a)?;
                    check(b)?;
                    let ga = g.zip_map(&self.nodes[b.0].value, |x, y| x * y)?;
                    let gb = g.zip_map(&self.nodes[a.0].value, |x, y| x * y)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Scale(a, s) => {
                    check(a)?;
                    accumulate(&mut grads, *a, g.scale(*s))?;
                }
                Op::MatMul(a, b) => {
                    check(a)?;
                    check(b)?;
                    let ga = g.matmul_nt(&self.nodes[b.0].value)?;
                    let gb = self.nodes[a.0].value.matmul_tn(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Spmm(x, pt) => {
                    check(x)?;
                    accumulate(&mut grads, *x, spmm_blocks(pt, &g)?)?;
                }
                Op::Sigmoid(a) => {
                    check(a)?;
                    let ga = g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Tanh(a) => {
                    check(a)?;
                    let ga = g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    check(a)?;
                    let ga = g.zip_map(&self.nodes[a.0].value, |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        check(p)?;
                        let w = self.nodes[p.0].value.n_cols();
                        accumulate(&mut grads, *p, g.slice_cols(offset, w)?)?;
                        offset += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    check(a)?;
                    let src = &self.nodes[a.0].value;
                    let mut ga = DenseMatrix::zeros(src.n_rows(), src.n_cols());
                    let w = g.n_cols();
                    for r in 0..g.n_rows() {
                        ga.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::AddRowBroadcast(a, bias) => {
                    check(a)?;
                    check(bias)?;
                    let mut gb = DenseMatrix::zeros(1, g.n_cols());
                    for r in 0..g.n_rows() {
                        for (d, &s) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *bias, gb)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Sum(a) => {
                    check(a)?;
                    let (r, c) = self.nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, DenseMatrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::Mean(a) => {
                    check(a)?;
                    let (r, c) = self.nodes[a.0].value.shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut grads, *a, DenseMatrix::filled(r, c, g.get(0, 0) / n))?;
                }
                Op::Linearized(a, local) => {
                    check(a)?;
                    accumulate(&mut grads, *a, local.scale(g.get(0, 0)))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
