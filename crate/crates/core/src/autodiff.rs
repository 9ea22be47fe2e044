//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to a [`Tape`] holding the forward value and
//! a record of its inputs. [`Tape::backward`] walks the nodes in reverse
//! creation order, so inputs always precede their consumers and the tape is
//! acyclic by construction.
//!
//! Parameters enter the tape through [`Tape::param`], which shares the
//! stored value (no copy) and remembers the binding so that gradients can be
//! folded back into a [`ParamStore`](crate::params::ParamStore).

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::TensorError;
use crate::params::ParamStore;
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Bce(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Pointwise and reduction operations addressable by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Sigmoid,
    Tanh,
    Relu,
    Hadamard,
    Add,
    Sub,
    Scale(ScaleFactor),
    MeanPoolRows,
    MaxPoolRows,
    ConcatRows,
}

/// Bit pattern of an `f64` scale factor, so that [`ElementwiseKind`] stays `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleFactor(u64);

impl ScaleFactor {
    pub fn new(v: f64) -> Self {
        ScaleFactor(v.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

/// Lower clamp for probabilities fed to [`Tape::bce`].
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<(String, Var)>,
    index: HashMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a leaf, or `None` when the leaf does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub(crate) fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Parameters bound with [`Tape::param`], in binding order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.bound
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives gradients but is not bound to a store.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a named parameter of `store`. Binding the same name twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.index.get(name) {
            return Ok(v);
        }
        let value = store
            .shared(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let v = self.push_arc(value, Op::Leaf, true);
        self.index.insert(name.to_string(), v);
        self.bound.push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose()?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same("hadamard", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = ta.dims2("add_row")?;
        if tr.shape() != [1, n] {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    /// Multiplies row `i` of an `m × n` matrix by `col[i]` (`col` is `m × 1`),
    /// i.e. `diag(col)·a`.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (ta, tc) = (self.value(a), self.value(col));
        let (m, n) = ta.dims2("scale_rows")?;
        if tc.shape() != [m, 1] {
            return Err(mismatch("scale_rows", ta, tc));
        }
        let mut data = ta.data().to_vec();
        for (i, chunk) in data.chunks_mut(n.max(1)).enumerate().take(m) {
            let s = tc.data()[i];
            chunk.iter_mut().for_each(|x| *x *= s);
        }
        let out = Tensor::matrix(m, n, data)?;
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::ScaleRows(a, col), ng))
    }

    /// `mul · a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| mul * x + add).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, Op::Affine(a, mul), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    ///
    /// Masked-out entries (`mask[i*n + j] == false`) are exactly zero in the
    /// output. A row with no unmasked entry is an error.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("softmax_rows")?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_rows mask",
                    left: vec![m, n],
                    right: vec![mask.len()],
                });
            }
        }
        let keep = |i: usize| mask.is_none_or(|mk| mk[i]);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &t.data()[r * n..(r + 1) * n];
            // Non-finite logits propagate as NaN, like every other op.
            let mut max = None::<f64>;
            for (j, &x) in row.iter().enumerate() {
                if keep(r * n + j) {
                    max = Some(max.map_or(x, |m| if x > m || x.is_nan() { x } else { m }));
                }
            }
            let Some(max) = max else {
                return Err(TensorError::DegenerateRow { row: r });
            };
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                if keep(r * n + j) {
                    let e = (x - max).exp();
                    out[r * n + j] = e;
                    sum += e;
                }
            }
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v /= sum);
        }
        let out = Tensor::matrix(m, n, out)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SoftmaxRows(a), ng))
    }

    /// Selects rows by index (repeats allowed). Backward scatters-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows: m,
                });
            }
            data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
        }
        let out = Tensor::matrix(idx.len(), n, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Mean over the first dimension: `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("mean_pool_rows")?;
        if m == 0 {
            return Err(TensorError::Empty { op: "mean_pool_rows" });
        }
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(t.row_slice(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), ng))
    }

    /// Max over the first dimension: `m × n → 1 × n`. The gradient goes to
    /// the maximal row of each column, the lowest row index on ties.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (m, n) = t.dims2("max_pool_rows")?;
        if m == 0 {
            return Err(TensorError::Empty { op: "max_pool_rows" });
        }
        let mut out = t.row_slice(0).to_vec();
        let mut arg = vec![0usize; n];
        for r in 1..m {
            for (j, &x) in t.row_slice(r).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = r;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(out), Op::MaxRows(a, arg), ng))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_rows" })?;
        let (_, n) = self.value(first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2("concat_rows")?;
            if c != n {
                return Err(mismatch("concat_rows", self.value(first), t));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let (m, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims2("concat_cols")?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(m, total, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Binary cross-entropy of a `1 × 1` probability against a 0/1 label.
    /// The probability is clamped to `[1e-7, 1 - 1e-7]`; inside the clamp
    /// region the gradient is zero.
    pub fn bce(&mut self, p: Var, label: f64) -> Result<Var, TensorError> {
        let t = self.value(p);
        if t.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: t.shape().to_vec(),
            });
        }
        let c = t.item().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * c.ln() + (1.0 - label) * (1.0 - c).ln());
        let ng = self.ng(p);
        Ok(self.push(Tensor::scalar(loss), Op::Bce(p, label), ng))
    }

    /// Dispatches a pointwise or reduction op by kind.
    pub fn elementwise(&mut self, kind: ElementwiseKind, operands: &[Var]) -> Result<Var, TensorError> {
        let arity = match kind {
            ElementwiseKind::Hadamard | ElementwiseKind::Add | ElementwiseKind::Sub => 2,
            ElementwiseKind::ConcatRows => operands.len().max(1),
            _ => 1,
        };
        if operands.len() != arity {
            return Err(TensorError::Internal(format!(
                "{kind:?} expects {arity} operand(s), got {}",
                operands.len()
            )));
        }
        let a = operands[0];
        match kind {
            ElementwiseKind::Sigmoid => Ok(self.sigmoid(a)),
            ElementwiseKind::Tanh => Ok(self.tanh(a)),
            ElementwiseKind::Relu => Ok(self.relu(a)),
            ElementwiseKind::Hadamard => self.mul(a, operands[1]),
            ElementwiseKind::Add => self.add(a, operands[1]),
            ElementwiseKind::Sub => self.sub(a, operands[1]),
            ElementwiseKind::Scale(s) => Ok(self.scale(a, s.get())),
            ElementwiseKind::MeanPoolRows => self.mean_rows(a),
            ElementwiseKind::MaxPoolRows => self.max_rows(a),
            ElementwiseKind::ConcatRows => self.concat_rows(operands),
        }
    }

    /// Reverse pass from a scalar `loss`. Leaves that do not influence the
    /// loss get no entry in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        id: usize,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let check = |v: Var| -> Result<(), TensorError> {
            if v.0 >= id {
                Err(TensorError::Internal(format!(
                    "node {id} consumes later node {}",
                    v.0
                )))
            } else {
                Ok(())
            }
        };
        let mut acc = |v: Var, t: Tensor| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        let map = |src: &Tensor, f: &dyn Fn(usize, f64) -> f64| -> Tensor {
            let data = src.data().iter().enumerate().map(|(i, &x)| f(i, x)).collect();
            Tensor::new(src.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                check(*a)?;
                check(*b)?;
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, 0.0);
                    acc(*a, Tensor::matrix(m, k, da)?);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, 0.0);
                    acc(*b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Transpose(a) => {
                check(*a)?;
                acc(*a, g.transpose()?);
            }
            Op::Add(a, b) => {
                check(*a)?;
                check(*b)?;
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                check(*a)?;
                check(*b)?;
                acc(*a, g.clone());
                acc(*b, map(g, &|_, x| -x));
            }
            Op::Mul(a, b) => {
                check(*a)?;
                check(*b)?;
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, map(g, &|i, x| x * tb.data()[i]));
                acc(*b, map(g, &|i, x| x * ta.data()[i]));
            }
            Op::AddRow(a, row) => {
                check(*a)?;
                check(*row)?;
                let n = g.cols();
                let mut dr = vec![0.0; n];
                for r in 0..g.rows() {
                    for (d, x) in dr.iter_mut().zip(g.row_slice(r)) {
                        *d += x;
                    }
                }
                acc(*a, g.clone());
                acc(*row, Tensor::row(dr));
            }
            Op::ScaleRows(a, col) => {
                check(*a)?;
                check(*col)?;
                let (ta, tc) = (self.value(*a), self.value(*col));
                let n = g.cols();
                acc(*a, map(g, &|i, x| x * tc.data()[i / n]));
                let dc = (0..g.rows())
                    .map(|r| {
                        g.row_slice(r)
                            .iter()
                            .zip(ta.row_slice(r))
                            .map(|(x, y)| x * y)
                            .sum()
                    })
                    .collect();
                acc(*col, Tensor::matrix(g.rows(), 1, dc)?);
            }
            Op::Affine(a, mul) => {
                check(*a)?;
                acc(*a, map(g, &|_, x| x * mul));
            }
            Op::Sigmoid(a) => {
                check(*a)?;
                acc(*a, map(g, &|i, x| {
                    let s = y.data()[i];
                    x * s * (1.0 - s)
                }));
            }
            Op::Tanh(a) => {
                check(*a)?;
                acc(*a, map(g, &|i, x| {
                    let t = y.data()[i];
                    x * (1.0 - t * t)
                }));
            }
            Op::Relu(a) => {
                check(*a)?;
                let ta = self.value(*a);
                acc(*a, map(g, &|i, x| if ta.data()[i] > 0.0 { x } else { 0.0 }));
            }
            Op::SoftmaxRows(a) => {
                check(*a)?;
                let n = g.cols();
                let mut da = vec![0.0; g.numel()];
                for r in 0..g.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        da[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(g.shape().to_vec(), da)?);
            }
            Op::GatherRows(a, idx) => {
                check(*a)?;
                if self.ng(*a) {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let mut da = Tensor::zeros(ta.shape());
                    let buf = da.data_mut();
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, x) in buf[src * n..(src + 1) * n].iter_mut().zip(g.row_slice(r)) {
                            *d += x;
                        }
                    }
                    acc(*a, da);
                }
            }
            Op::MeanRows(a) => {
                check(*a)?;
                let ta = self.value(*a);
                let m = ta.rows();
                let n = ta.cols();
                let data = (0..m * n).map(|i| g.data()[i % n] / m as f64).collect();
                acc(*a, Tensor::matrix(m, n, data)?);
            }
            Op::MaxRows(a, arg) => {
                check(*a)?;
                let ta = self.value(*a);
                let n = ta.cols();
                let mut da = Tensor::zeros(ta.shape());
                for (j, &r) in arg.iter().enumerate() {
                    da.data_mut()[r * n + j] += g.data()[j];
                }
                acc(*a, da);
            }
            Op::Sum(a) => {
                check(*a)?;
                let ta = self.value(*a);
                acc(*a, Tensor::full(ta.shape(), g.item()));
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    check(p)?;
                    let r = self.value(p).rows();
                    let slice = g.data()[offset * n..(offset + r) * n].to_vec();
                    acc(p, Tensor::matrix(r, n, slice)?);
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    check(p)?;
                    let c = self.value(p).cols();
                    let mut data = Vec::with_capacity(m * c);
                    for r in 0..m {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                    }
                    acc(p, Tensor::matrix(m, c, data)?);
                    offset += c;
                }
            }
            Op::Bce(p, label) => {
                check(*p)?;
                let raw = self.value(*p).item();
                let d = if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&raw) {
                    0.0
                } else {
                    -label / raw + (1.0 - label) / (1.0 - raw)
                };
                acc(*p, Tensor::full(self.value(*p).shape(), d * g.item()));
            }
        }
        Ok(())
    }
}
