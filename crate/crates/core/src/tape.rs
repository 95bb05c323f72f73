//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a [`Node`]. Nodes
//! are appended in evaluation order, so a node's parents always have smaller
//! ids and the tape is acyclic by construction. [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints.
//!
//! A tape is single-threaded; independent passes use independent tapes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `x + b` with the `1 × cols` bias broadcast over rows.
    AddRow(Var, Var),
    Hadamard(Var, Var),
    /// `x ⊙ w` with the `1 × cols` weight row broadcast over rows.
    MulRow(Var, Var),
    /// `scale * x + shift`, elementwise.
    Affine(Var, f64, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    /// Row `index` of the input as a `1 × cols` matrix.
    Row(Var, usize),
    StackRows(Vec<Var>),
    Sum(Var),
    /// `scale * Σ_{t: mask[t]} -ln max(p[t][label[t]], LOG_CLAMP)`, a `1 × 1` node.
    MaskedNll {
        probs: Var,
        labels: Vec<usize>,
        mask: Vec<bool>,
        scale: f64,
    },
}

impl Op {
    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Hadamard(a, b) | Op::MulRow(a, b) => {
                vec![*a, *b]
            }
            Op::Affine(a, ..)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::Row(a, _)
            | Op::Sum(a) => vec![*a],
            Op::ConcatCols(parts) | Op::StackRows(parts) => parts.clone(),
            Op::MaskedNll { probs, .. } => vec![*probs],
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Hadamard(..) => "hadamard",
            Op::MulRow(..) => "mul_row",
            Op::Affine(..) => "affine",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Row(..) => "row",
            Op::StackRows(_) => "stack_rows",
            Op::Sum(_) => "sum",
            Op::MaskedNll { .. } => "masked_nll",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    id: Var,
    value: Matrix,
    op: Op,
}

impl Node {
    pub fn id(&self) -> Var {
        self.id
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn op(&self) -> &Op {
        &self.op
    }
}

/// Deliberate errors injected into backward rules. Used only as a negative
/// control for gradient checking.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the tanh derivative by 1.01.
    TanhGrad,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Option<Fault>) -> Self {
        Tape {
            nodes: Vec::new(),
            fault,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node { id, value, op });
        id
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// Elementwise sum of equal shapes, or row-broadcast when `b` is `1 × cols`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() == self.value(b).shape() {
            let v = self.value(a).add(self.value(b))?;
            Ok(self.push(v, Op::Add(a, b)))
        } else {
            self.add_row(a, b)
        }
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    pub fn mul_row(&mut self, x: Var, weights: Var) -> Result<Var> {
        let v = self.value(x).mul_row(self.value(weights))?;
        Ok(self.push(v, Op::MulRow(x, weights)))
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(v, Op::Affine(x, scale, shift))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).tanh();
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).sigmoid();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).softmax_rows();
        self.push(v, Op::SoftmaxRows(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&values)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let src = self.value(x);
        if index >= src.rows() {
            return Err(Error::contract(alloc::format!(
                "row {index} out of range for {:?}",
                src.shape()
            )));
        }
        let v = src.row_matrix(index);
        Ok(self.push(v, Op::Row(x, index)))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::stack_rows(&values)?;
        Ok(self.push(v, Op::StackRows(parts.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Scaled negative log-likelihood of `labels` under row-probabilities
    /// `probs`, counting only rows where `mask` is true.
    pub fn masked_nll(&mut self, probs: Var, labels: &[usize], mask: &[bool], scale: f64) -> Result<Var> {
        let p = self.value(probs);
        if labels.len() != p.rows() || mask.len() != p.rows() {
            return Err(Error::dim("masked_nll", p.shape(), (labels.len(), mask.len())));
        }
        let mut total = 0.0;
        for (t, (&y, &keep)) in labels.iter().zip(mask).enumerate() {
            if !keep {
                continue;
            }
            if y >= p.cols() {
                return Err(Error::contract(alloc::format!(
                    "label {y} out of range for {} classes",
                    p.cols()
                )));
            }
            total -= libm::log(p.get(t, y).max(LOG_CLAMP));
        }
        let v = Matrix::filled(1, 1, scale * total);
        Ok(self.push(
            v,
            Op::MaskedNll {
                probs,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                scale,
            },
        ))
    }

    /// Reverse accumulation from a `1 × 1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::contract(alloc::format!(
                "backward needs a 1x1 loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_nt(self.value(*b))?);
                acc(*b, self.value(*a).matmul_tn(g)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                acc(*bias, g.sum_rows());
            }
            Op::Hadamard(a, b) => {
                acc(*a, g.hadamard(self.value(*b))?);
                acc(*b, g.hadamard(self.value(*a))?);
            }
            Op::MulRow(x, w) => {
                acc(*x, g.mul_row(self.value(*w))?);
                acc(*w, g.hadamard(self.value(*x))?.sum_rows());
            }
            Op::Affine(x, scale, _) => acc(*x, g.scale(*scale)),
            Op::Tanh(x) => {
                let k = if self.fault == Some(Fault::TanhGrad) { 1.01 } else { 1.0 };
                let d = node.value.map(|y| k * (1.0 - y * y));
                acc(*x, g.hadamard(&d)?);
            }
            Op::Sigmoid(x) => {
                let d = node.value.map(|y| y * (1.0 - y));
                acc(*x, g.hadamard(&d)?);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Matrix::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    acc(p, dp);
                }
            }
            Op::Row(x, index) => {
                let (rows, cols) = self.value(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                dx.row_mut(*index).copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    acc(p, Matrix::from_vec(rows, cols, slice)?);
                }
            }
            Op::Sum(x) => {
                let (rows, cols) = self.value(*x).shape();
                acc(*x, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::MaskedNll {
                probs,
                labels,
                mask,
                scale,
            } => {
                let p = self.value(*probs);
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                let upstream = g.get(0, 0);
                for (t, (&y, &keep)) in labels.iter().zip(mask).enumerate() {
                    let pt = p.get(t, y);
                    if keep && pt > LOG_CLAMP {
                        dp.set(t, y, -upstream * scale / pt);
                    }
                }
                acc(*probs, dp);
            }
        }
        Ok(())
    }
}

/// Adjoints of every node reached from the loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of `shape` when `v` is off the loss path.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(&[3.0]));
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn bilinear_gradient() {
        let mut tape = Tape::new();
        let a_val = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b_val = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0], [3.0, 0.0]]).unwrap();
        let a = tape.leaf(a_val.clone());
        let b = tape.leaf(b_val.clone());
        let p = tape.matmul(a, b).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        let want_a = Matrix::ones(2, 2).matmul(&b_val.transpose()).unwrap();
        let want_b = a_val.transpose().matmul(&Matrix::ones(2, 2)).unwrap();
        assert_eq!(g.get(a).unwrap(), &want_a);
        assert_eq!(g.get(b).unwrap(), &want_b);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let unused = tape.leaf(Matrix::zeros(3, 3));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused, (3, 3)), Matrix::zeros(3, 3));
    }

    #[test]
    fn parents_precede_children() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::row_vector(&[0.2, -0.4]));
        let w = tape.leaf(Matrix::identity(2));
        let h = tape.matmul(x, w).unwrap();
        let t = tape.tanh(h);
        let s = tape.softmax_rows(t);
        let _ = tape.sum(s);
        for node in tape.nodes() {
            for p in node.op().parents() {
                assert!(p < node.id());
            }
        }
        assert_eq!(tape.node(t).op().kind(), "tanh");
    }

    #[test]
    fn masked_nll_skips_masked_rows() {
        let mut tape = Tape::new();
        let p = tape.leaf(Matrix::from_rows(&[[0.75, 0.25], [0.0, 1.0]]).unwrap());
        let loss = tape.masked_nll(p, &[0, 0], &[true, false], 1.0).unwrap();
        assert!((tape.value(loss).get(0, 0) + libm::log(0.75)).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().row(1), &[0.0, 0.0]);
    }
}
