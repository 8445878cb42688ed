//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles in creation
//! order, so parents always precede children. [`Tape::grad`] walks the record
//! backwards once, accumulating vector-Jacobian products.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    SubCol(usize, usize),
    DivCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Square(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    Gelu(usize),
    RowSum(usize),
    Sum(usize),
    RowNormalize(usize),
    RowSoftmax(usize),
    RowL2Normalize(usize),
    RowLogSumExp { x: usize, exclude_diag: bool },
    ZeroDiag(usize),
    ConcatCols(Vec<usize>),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Recording of a computation; single-threaded, one per training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    visits: Cell<usize>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (data, masks, targets).
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape) && v.id < self.len()
    }

    /// Number of nodes visited by the most recent backward pass.
    pub fn last_backward_visits(&self) -> usize {
        self.visits.get()
    }

    /// Gradients of the scalar `loss` with respect to each of `params`.
    ///
    /// Parameters the loss does not depend on get zero gradients.
    pub fn grad(&self, loss: Var<'_>, params: &[Var<'_>]) -> Result<Vec<Matrix>> {
        if !self.owns(&loss) {
            return Err(Error::Usage("loss is not recorded on this tape".into()));
        }
        for (k, p) in params.iter().enumerate() {
            if !self.owns(p) {
                return Err(Error::Usage(format!(
                    "parameter {k} is not registered on this tape"
                )));
            }
        }
        let loss_shape = loss.value().shape();
        if loss_shape != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got {}x{}",
                loss_shape.0, loss_shape.1
            )));
        }
        let grads = self.backward(loss.id)?;
        Ok(params
            .iter()
            .map(|p| {
                grads[p.id].clone().unwrap_or_else(|| {
                    let (r, c) = p.value().shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect())
    }

    fn backward(&self, root: usize) -> Result<Vec<Option<Matrix>>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = vec![None; root + 1];
        grads[root] = Some(Matrix::scalar(1.0));
        let mut visits = 0;

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            visits += 1;
            let node = &nodes[id];
            let out = &node.value;
            let val = |i: usize| -> &Matrix { &nodes[i].value };
            let req = |i: usize| nodes[i].requires_grad;
            let mut contrib: Vec<(usize, Matrix)> = Vec::new();

            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if req(*a) {
                        contrib.push((*a, g.matmul_nt(val(*b))?));
                    }
                    if req(*b) {
                        contrib.push((*b, val(*a).matmul_tn(&g)?));
                    }
                }
                Op::Transpose(a) => contrib.push((*a, g.transpose())),
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g));
                }
                Op::Sub(a, b) => {
                    contrib.push((*b, g.scale(-1.0)));
                    contrib.push((*a, g));
                }
                Op::Mul(a, b) => {
                    if req(*a) {
                        contrib.push((*a, g.hadamard(val(*b))?));
                    }
                    if req(*b) {
                        contrib.push((*b, g.hadamard(val(*a))?));
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*a) {
                        contrib.push((*a, g.zip_map(bv, "div", |g, b| g / b)?));
                    }
                    if req(*b) {
                        let mut gb = g.zip_map(av, "div", |g, a| g * a)?;
                        for (x, b) in gb.data_mut().iter_mut().zip(bv.data()) {
                            *x = -*x / (b * b);
                        }
                        contrib.push((*b, gb));
                    }
                }
                Op::AddRow(a, b) => {
                    if req(*b) {
                        contrib.push((*b, col_sums(&g)));
                    }
                    contrib.push((*a, g));
                }
                Op::MulRow(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*b) {
                        contrib.push((*b, col_sums(&g.hadamard(av)?)));
                    }
                    if req(*a) {
                        let mut ga = g.clone();
                        for i in 0..ga.rows() {
                            for (x, s) in ga.row_mut(i).iter_mut().zip(bv.data()) {
                                *x *= s;
                            }
                        }
                        contrib.push((*a, ga));
                    }
                }
                Op::SubCol(a, b) => {
                    if req(*b) {
                        let sums: Vec<f64> = g.row_sums().into_iter().map(|s| -s).collect();
                        contrib.push((*b, Matrix::column(&sums)));
                    }
                    contrib.push((*a, g));
                }
                Op::DivCol(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if req(*b) {
                        let gb: Vec<f64> = (0..g.rows())
                            .map(|i| {
                                let d = bv.data()[i];
                                -dot(g.row(i), av.row(i)) / (d * d)
                            })
                            .collect();
                        contrib.push((*b, Matrix::column(&gb)));
                    }
                    if req(*a) {
                        let mut ga = g.clone();
                        for i in 0..ga.rows() {
                            let d = bv.data()[i];
                            ga.row_mut(i).iter_mut().for_each(|x| *x /= d);
                        }
                        contrib.push((*a, ga));
                    }
                }
                Op::Scale(a, c) => contrib.push((*a, g.scale(*c))),
                Op::AddScalar(a) => contrib.push((*a, g)),
                Op::Relu(a) => contrib.push((
                    *a,
                    g.zip_map(val(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?,
                )),
                Op::Square(a) => {
                    contrib.push((*a, g.zip_map(val(*a), "square", |g, x| 2.0 * x * g)?))
                }
                Op::Log(a) => contrib.push((*a, g.zip_map(val(*a), "log", |g, x| g / x)?)),
                Op::Exp(a) => contrib.push((*a, g.hadamard(out)?)),
                Op::Sqrt(a) => contrib.push((*a, g.zip_map(out, "sqrt", |g, y| g / (2.0 * y))?)),
                Op::Gelu(a) => {
                    contrib.push((*a, g.zip_map(val(*a), "gelu", |g, x| g * gelu_grad(x))?))
                }
                Op::RowSum(a) => {
                    let (r, c) = val(*a).shape();
                    contrib.push((*a, Matrix::from_fn(r, c, |i, _| g.data()[i])));
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    contrib.push((*a, Matrix::filled(r, c, g.data()[0])));
                }
                Op::RowNormalize(a) => {
                    let av = val(*a);
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let s: f64 = av.row(i).iter().sum();
                        let gy = dot(g.row(i), out.row(i));
                        ga.row_mut(i).iter_mut().for_each(|x| *x = (*x - gy) / s);
                    }
                    contrib.push((*a, ga));
                }
                Op::RowSoftmax(x) => {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let gy = dot(g.row(i), out.row(i));
                        for (x, y) in ga.row_mut(i).iter_mut().zip(out.row(i)) {
                            *x = y * (*x - gy);
                        }
                    }
                    contrib.push((*x, ga));
                }
                Op::RowL2Normalize(a) => {
                    let av = val(*a);
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let n = norm(av.row(i));
                        let gy = dot(g.row(i), out.row(i));
                        for (x, y) in ga.row_mut(i).iter_mut().zip(out.row(i)) {
                            *x = (*x - y * gy) / n;
                        }
                    }
                    contrib.push((*a, ga));
                }
                Op::RowLogSumExp { x, exclude_diag } => {
                    let xv = val(*x);
                    let mut ga = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..xv.rows() {
                        let lse = out.data()[i];
                        let gi = g.data()[i];
                        for j in 0..xv.cols() {
                            if *exclude_diag && i == j {
                                continue;
                            }
                            ga.set(i, j, gi * (xv.get(i, j) - lse).exp());
                        }
                    }
                    contrib.push((*x, ga));
                }
                Op::ZeroDiag(a) => {
                    let mut ga = g;
                    for i in 0..ga.rows().min(ga.cols()) {
                        ga.set(i, i, 0.0);
                    }
                    contrib.push((*a, ga));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let idx: Vec<usize> = (offset..offset + w).collect();
                        contrib.push((p, g.select_cols(&idx)));
                        offset += w;
                    }
                }
            }

            for (p, gp) in contrib {
                if !req(p) {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&gp)?,
                    slot @ None => *slot = Some(gp),
                }
            }
        }
        self.visits.set(visits);
        Ok(grads)
    }
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Matrix::new(1, g.cols(), out).expect("row vector shape")
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Usage("operands recorded on different tapes".into()))
        }
    }

    fn unary(&self, value: Matrix, op: Op) -> Var<'t> {
        let req = self.tape.requires(self.id);
        self.tape.push(value, op, req)
    }

    fn binary(&self, other: &Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        let req = self.tape.requires(self.id) || self.tape.requires(other.id);
        self.tape.push(value, op, req)
    }

    fn finite(self, op: &'static str) -> Result<Self> {
        self.value().check_finite(op)?;
        Ok(self)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().matmul(&rhs.value())?;
        Ok(self.binary(&rhs, v, Op::MatMul(self.id, rhs.id)))
    }

    pub fn t(self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().add(&rhs.value())?;
        Ok(self.binary(&rhs, v, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().sub(&rhs.value())?;
        Ok(self.binary(&rhs, v, Op::Sub(self.id, rhs.id)))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().hadamard(&rhs.value())?;
        Ok(self.binary(&rhs, v, Op::Mul(self.id, rhs.id)))
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "div", |a, b| a / b)?;
        self.binary(&rhs, v, Op::Div(self.id, rhs.id)).finite("div")
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let (x, b) = (self.value(), row.value());
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape("add_row", x.shape(), b.shape()));
        }
        let mut v = (*x).clone();
        for i in 0..v.rows() {
            v.row_mut(i)
                .iter_mut()
                .zip(b.data())
                .for_each(|(a, s)| *a += s);
        }
        Ok(self.binary(&row, v, Op::AddRow(self.id, row.id)))
    }

    /// Multiplies every row elementwise by a `1 x cols` row vector.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let (x, b) = (self.value(), row.value());
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape("mul_row", x.shape(), b.shape()));
        }
        let mut v = (*x).clone();
        for i in 0..v.rows() {
            v.row_mut(i)
                .iter_mut()
                .zip(b.data())
                .for_each(|(a, s)| *a *= s);
        }
        Ok(self.binary(&row, v, Op::MulRow(self.id, row.id)))
    }

    /// Subtracts entry `i` of a `rows x 1` column from row `i`.
    pub fn sub_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&col)?;
        let (x, c) = (self.value(), col.value());
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::shape("sub_col", x.shape(), c.shape()));
        }
        let mut v = (*x).clone();
        for i in 0..v.rows() {
            let s = c.data()[i];
            v.row_mut(i).iter_mut().for_each(|a| *a -= s);
        }
        Ok(self.binary(&col, v, Op::SubCol(self.id, col.id)))
    }

    /// Divides row `i` by entry `i` of a `rows x 1` column.
    pub fn div_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&col)?;
        let (x, c) = (self.value(), col.value());
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(Error::shape("div_col", x.shape(), c.shape()));
        }
        let mut v = (*x).clone();
        for i in 0..v.rows() {
            let s = c.data()[i];
            v.row_mut(i).iter_mut().for_each(|a| *a /= s);
        }
        self.binary(&col, v, Op::DivCol(self.id, col.id))
            .finite("div_col")
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = self.value().map(f64::ln);
        self.unary(v, Op::Log(self.id)).finite("log")
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id)).finite("exp")
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(index) = x.data().iter().position(|&v| v <= 0.0) {
            return Err(Error::NonFinite { op: "sqrt", index });
        }
        let v = x.map(f64::sqrt);
        Ok(self.unary(v, Op::Sqrt(self.id)))
    }

    /// GeLU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        let v = self.value().map(gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    /// `rows x 1` column of row sums.
    pub fn row_sum(self) -> Var<'t> {
        let v = Matrix::column(&self.value().row_sums());
        self.unary(v, Op::RowSum(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Divides each row by its sum.
    pub fn row_normalize(self) -> Result<Var<'t>> {
        let x = self.value();
        let mut v = (*x).clone();
        for i in 0..v.rows() {
            let s: f64 = x.row(i).iter().sum();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::degenerate(
                    "row_normalize",
                    format!("row {i} sums to {s}"),
                ));
            }
            v.row_mut(i).iter_mut().for_each(|a| *a /= s);
        }
        Ok(self.unary(v, Op::RowNormalize(self.id)))
    }

    pub fn row_softmax(self) -> Result<Var<'t>> {
        let v = self.value().row_softmax()?;
        Ok(self.unary(v, Op::RowSoftmax(self.id)))
    }

    /// Row softmax with the diagonal excluded (its probability is exactly 0).
    pub fn row_softmax_offdiag(self) -> Result<Var<'t>> {
        let x = self.value();
        x.check_finite("row_softmax_offdiag")?;
        let lse = offdiag_lse(&x)?;
        let v = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            if i == j {
                0.0
            } else {
                (x.get(i, j) - lse[i]).exp()
            }
        });
        Ok(self.unary(v, Op::RowSoftmax(self.id)))
    }

    pub fn row_l2_normalize(self) -> Result<Var<'t>> {
        let v = self.value().row_l2_normalize()?;
        Ok(self.unary(v, Op::RowL2Normalize(self.id)))
    }

    /// `rows x 1` column of `log Σ_j exp(x_ij)`, optionally skipping `j == i`.
    pub fn row_logsumexp(self, exclude_diag: bool) -> Result<Var<'t>> {
        let x = self.value();
        x.check_finite("row_logsumexp")?;
        let lse = if exclude_diag {
            offdiag_lse(&x)?
        } else {
            (0..x.rows())
                .map(|i| logsumexp(x.row(i).iter().copied()))
                .collect()
        };
        Ok(self.unary(
            Matrix::column(&lse),
            Op::RowLogSumExp {
                x: self.id,
                exclude_diag,
            },
        ))
    }

    pub fn zero_diag(self) -> Var<'t> {
        let mut v = (*self.value()).clone();
        for i in 0..v.rows().min(v.cols()) {
            v.set(i, i, 0.0);
        }
        self.unary(v, Op::ZeroDiag(self.id))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Matrix> = values.iter().map(|m| m.as_ref()).collect();
        let v = Matrix::hstack(&refs)?;
        let req = parts.iter().any(|p| first.tape.requires(p.id));
        Ok(first
            .tape
            .push(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), req))
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn offdiag_lse(x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() < 2 {
        return Err(Error::degenerate(
            "row_logsumexp",
            "excluding the diagonal leaves an empty row",
        ));
    }
    Ok((0..x.rows())
        .map(|i| {
            logsumexp(
                x.row(i)
                    .iter()
                    .enumerate()
                    .filter(move |(j, _)| *j != i)
                    .map(|(_, v)| *v),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff, max_relative_error, Rng};

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap());
        let g = tape.grad(w.sum(), &[w]).unwrap();
        assert_eq!(g[0], Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn half_square_norm_gradient_is_w() {
        let tape = Tape::new();
        let m = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let w = tape.param(m.clone());
        let loss = w.square().sum().scale(0.5);
        assert_eq!(tape.grad(loss, &[w]).unwrap()[0], m);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let tape = Tape::new();
        let w = tape.param(Matrix::filled(2, 2, 1.0));
        let unused = tape.param(Matrix::filled(3, 1, 1.0));
        let g = tape.grad(w.sum(), &[w, unused]).unwrap();
        assert_eq!(g[1], Matrix::zeros(3, 1));
    }

    #[test]
    fn foreign_param_is_a_usage_error() {
        let tape = Tape::new();
        let other = Tape::new();
        let w = tape.param(Matrix::filled(1, 1, 1.0));
        let x = other.param(Matrix::filled(1, 1, 1.0));
        assert!(matches!(tape.grad(w.sum(), &[x]), Err(Error::Usage(_))));
        assert!(matches!(tape.grad(w, &[w]).map(|_| ()), Ok(())));
        let wide = tape.param(Matrix::filled(1, 2, 1.0));
        assert!(matches!(tape.grad(wide, &[wide]), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_visits_each_reachable_node_once() {
        let tape = Tape::new();
        let w = tape.param(Matrix::filled(2, 2, 0.3));
        let a = w.matmul(w).unwrap();
        let b = a.add(w).unwrap().relu();
        let loss = b.mul(a).unwrap().sum();
        tape.grad(loss, &[w]).unwrap();
        assert_eq!(tape.last_backward_visits(), tape.len());
    }

    /// Every primitive checked against central differences.
    #[test]
    fn primitives_match_finite_differences() {
        type Build = for<'t> fn(Var<'t>, &'t Tape) -> Result<Var<'t>>;
        let cases: Vec<(&str, Build)> = vec![
            ("matmul", |x, t| {
                x.matmul(t.constant(Matrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.1 - 0.3)))
            }),
            ("transpose", |x, _| Ok(x.t().matmul(x)?)),
            ("mul/div", |x, _| x.mul(x)?.div(x.square().add_scalar(1.0))),
            ("rows", |x, t| {
                let b = t.constant(Matrix::from_fn(1, 4, |_, j| j as f64 + 0.5));
                let c = t.constant(Matrix::from_fn(3, 1, |i, _| i as f64 + 1.5));
                x.add_row(b)?.mul_row(b)?.sub_col(c)?.div_col(c)
            }),
            ("unary", |x, _| {
                Ok(x.gelu()
                    .relu()
                    .square()
                    .add_scalar(1.0)
                    .log()?
                    .exp()?
                    .sqrt()?)
            }),
            ("reductions", |x, _| Ok(x.row_sum().square())),
            ("row_normalize", |x, _| {
                x.square().add_scalar(0.1).row_normalize()
            }),
            ("softmax", |x, _| x.row_softmax()),
            ("softmax_offdiag", |x, _| {
                x.matmul(x.t())?.row_softmax_offdiag()
            }),
            ("l2", |x, _| x.row_l2_normalize()),
            ("lse", |x, _| x.row_logsumexp(false)),
            ("lse_offdiag", |x, _| x.matmul(x.t())?.row_logsumexp(true)),
            ("zero_diag", |x, _| Ok(x.matmul(x.t())?.zero_diag())),
            ("concat", |x, _| Var::concat_cols(&[x, x.square(), x])),
        ];
        for seed in 0..10 {
            let at = Rng::new(seed).normal_matrix(3, 4);
            let weights = Rng::new(100 + seed).normal_matrix(64, 64);
            for (name, build) in &cases {
                // Random linear functional of the output makes the loss scalar.
                let scalar = |x: &Matrix| -> Result<f64> {
                    let tape = Tape::new();
                    let out = build(tape.constant(x.clone()), &tape)?.value();
                    Ok(out
                        .data()
                        .iter()
                        .zip(weights.data())
                        .map(|(a, b)| a * b)
                        .sum())
                };
                let tape = Tape::new();
                let x = tape.param(at.clone());
                let out = build(x, &tape).unwrap();
                let (r, c) = out.shape();
                let w = tape.constant(Matrix::new(r, c, weights.data()[..r * c].to_vec()).unwrap());
                let loss = out.mul(w).unwrap().sum();
                let g = tape.grad(loss, &[x]).unwrap().remove(0);
                let fd = finite_diff(|m| scalar(m), &at, 1e-5).unwrap();
                let err = max_relative_error(&g, &fd);
                assert!(err < 1e-6, "{name} seed {seed}: rel err {err}");
            }
        }
    }
}
