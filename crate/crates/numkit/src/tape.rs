//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its output value; node ids are
//! therefore topologically ordered and [`Tape::backward`] can walk them once,
//! from the loss down to the leaves. Nodes that cannot reach a leaf (pure
//! constants) are skipped during the backward sweep.

use crate::error::{NumError, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    Sum(usize),
    AddN(Vec<usize>),
    SliceRows(usize, usize),
    GatherRow(usize, usize),
    ConcatRows(Vec<usize>),
    SoftmaxCe(usize, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
    /// Softmax probabilities for cross-entropy nodes.
    cache: Option<Matrix>,
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the nodes of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of its shape when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving zeros semantics for later calls.
    pub fn take(&mut self, var: Var) -> Matrix {
        match self.grads.get_mut(var.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Numerically stable softmax over all entries.
pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Matrix {
    /// Softmax over all entries, same shape as `self`.
    pub fn softmax(&self) -> Matrix {
        Matrix::from_raw(self.rows(), self.cols(), softmax(self.data()))
    }

    /// `-ln softmax(self)[target]`, computed with the log-sum-exp shift.
    pub fn softmax_cross_entropy(&self, target: usize) -> Result<f64> {
        if target >= self.len() {
            return Err(NumError::Contract(format!(
                "target index {target} out of range for {} logits",
                self.len()
            )));
        }
        if !self.is_finite() {
            return Err(NumError::NonFinite("softmax_cross_entropy logits".into()));
        }
        let max = self.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = self.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        Ok(lse - self.data()[target])
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumError::NonFinite("tape leaf".into()));
        }
        Ok(self.push(Op::Leaf, value, true))
    }

    /// Input that gradients are not propagated into.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumError::NonFinite("tape constant".into()));
        }
        Ok(self.push(Op::Constant, value, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::MatMul(a.0, b.0), value, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Add(a.0, b.0), value, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Sub(a.0, b.0), value, ng))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).elementwise_mul(self.value(b))?;
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Op::Mul(a.0, b.0), value, ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).tanh();
        let ng = self.needs(a.0);
        self.push(Op::Tanh(a.0), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).sigmoid();
        let ng = self.needs(a.0);
        self.push(Op::Sigmoid(a.0), value, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(a.0);
        self.push(Op::Scale(a.0, s), value, ng)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        let ng = self.needs(a.0);
        self.push(Op::Sum(a.0), value, ng)
    }

    /// Sum of several equally shaped nodes.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars
            .first()
            .ok_or_else(|| NumError::Contract("add_n of nothing".into()))?;
        let mut value = self.value(*first).clone();
        for v in &vars[1..] {
            value.axpy(1.0, self.value(*v)).map_err(|_| NumError::Dimension {
                op: "add_n",
                left: self.value(*first).shape(),
                right: self.value(*v).shape(),
            })?;
        }
        let ng = vars.iter().any(|v| self.needs(v.0));
        Ok(self.push(Op::AddN(vars.iter().map(|v| v.0).collect()), value, ng))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        if start + len > src.rows() {
            return Err(NumError::Dimension {
                op: "slice_rows",
                left: src.shape(),
                right: (start + len, src.cols()),
            });
        }
        let cols = src.cols();
        let data = src.data()[start * cols..(start + len) * cols].to_vec();
        let value = Matrix::from_raw(len, cols, data);
        let ng = self.needs(a.0);
        Ok(self.push(Op::SliceRows(a.0, start), value, ng))
    }

    /// Row `row` of `table`, returned as a column vector (embedding lookup).
    pub fn gather_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let src = self.value(table);
        if row >= src.rows() {
            return Err(NumError::Contract(format!(
                "row {row} out of range for table with {} rows",
                src.rows()
            )));
        }
        let value = Matrix::from_raw(src.cols(), 1, src.row(row).to_vec());
        let ng = self.needs(table.0);
        Ok(self.push(Op::GatherRow(table.0, row), value, ng))
    }

    /// Vertical concatenation of nodes with equal column counts.
    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let parts: Vec<&Matrix> = vars.iter().map(|v| self.value(*v)).collect();
        let value = Matrix::vstack(&parts)?;
        let ng = vars.iter().any(|v| self.needs(v.0));
        Ok(self.push(Op::ConcatRows(vars.iter().map(|v| v.0).collect()), value, ng))
    }

    /// Cross-entropy of `softmax(logits)` against a target class, as a `1 × 1` node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        let loss = lv.softmax_cross_entropy(target)?;
        let probs = lv.softmax();
        let ng = self.needs(logits.0);
        let v = self.push(
            Op::SoftmaxCe(logits.0, target),
            Matrix::from_raw(1, 1, vec![loss]),
            ng,
        );
        self.nodes[v.0].cache = Some(probs);
        Ok(v)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(NumError::Contract("loss node does not belong to this tape".into()));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let ga = g.matmul_t(&self.nodes[b].value)?;
                        accumulate(&mut grads[a], ga);
                    }
                    if self.needs(b) {
                        let gb = self.nodes[a].value.t_matmul(&g)?;
                        accumulate(&mut grads[b], gb);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(b) {
                        accumulate(&mut grads[b], g.clone());
                    }
                    if self.needs(a) {
                        accumulate(&mut grads[a], g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(b) {
                        accumulate(&mut grads[b], g.scale(-1.0));
                    }
                    if self.needs(a) {
                        accumulate(&mut grads[a], g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let ga = g.elementwise_mul(&self.nodes[b].value)?;
                        accumulate(&mut grads[a], ga);
                    }
                    if self.needs(b) {
                        let gb = g.elementwise_mul(&self.nodes[a].value)?;
                        accumulate(&mut grads[b], gb);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads[*a], Matrix::from_raw(y.rows(), y.cols(), data));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads[*a], Matrix::from_raw(y.rows(), y.cols(), data));
                }
                Op::Scale(a, s) => {
                    accumulate(&mut grads[*a], g.scale(*s));
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads[*a], Matrix::filled(r, c, g.data()[0]));
                }
                Op::AddN(inputs) => {
                    for &a in inputs {
                        if self.needs(a) {
                            accumulate(&mut grads[a], g.clone());
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let slot = grads[*a].get_or_insert_with(|| Matrix::zeros(r, c));
                    let off = start * c;
                    for (dst, src) in slot.data_mut()[off..off + g.len()].iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
                Op::GatherRow(table, row) => {
                    let (r, c) = self.nodes[*table].value.shape();
                    let slot = grads[*table].get_or_insert_with(|| Matrix::zeros(r, c));
                    for (dst, src) in slot.row_mut(*row).iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
                Op::ConcatRows(inputs) => {
                    let cols = node.value.cols();
                    let mut offset = 0;
                    for &a in inputs {
                        let (r, c) = self.nodes[a].value.shape();
                        if self.needs(a) {
                            let part = g.data()[offset..offset + r * cols].to_vec();
                            accumulate(&mut grads[a], Matrix::from_raw(r, c, part));
                        }
                        offset += r * cols;
                    }
                }
                Op::SoftmaxCe(logits, target) => {
                    let probs = node.cache.as_ref().expect("cross-entropy node caches probabilities");
                    let mut d = probs.scale(g.data()[0]);
                    d.data_mut()[*target] -= g.data()[0];
                    accumulate(&mut grads[*logits], d);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}
