//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] is built eagerly: every operation computes its value when it
//! is recorded, checks shapes and finiteness, and appends a node. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the adjoint of every node. The tape is rebuilt for each forward pass.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Cos(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        input: Var,
        inv_std: Vec<f64>,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    SumAll(Var),
    /// Scalar whose gradient with respect to `input` was computed outside the
    /// tape (ranking losses supply value and gradient together).
    External {
        input: Var,
        grad: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Cos(..) => "cos",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::SoftmaxRows(..) => "softmax",
            Op::LayerNormRows { .. } => "layer_norm",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::SumAll(..) => "sum",
            Op::External { .. } => "external",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    name: Option<String>,
}

/// Layer-norm variance guard added inside the square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    named: BTreeMap<String, Var>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    named: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name).and_then(|&v| self.get(v))
    }

    /// Gradient shaped like `like`, zero-filled when the loss did not reach it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| {
            Tensor::new(like.shape().to_vec(), vec![0.0; like.len()]).expect("valid shape")
        })
    }

    pub fn named(&self) -> BTreeMap<String, Tensor> {
        self.named
            .iter()
            .filter_map(|(n, &v)| self.get(v).map(|g| (n.clone(), g.clone())))
            .collect()
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

    /// Adds an unnamed leaf (constant or input).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a named leaf; its gradient can be looked up by name.
    pub fn leaf(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let name = name.into();
        let var = self.constant(value);
        self.nodes[var.0].name = Some(name.clone());
        self.named.insert(name, var);
        var
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.named.get(name).copied()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    fn node_label(&self, op: &Op) -> String {
        format!("{}#{}", op.name(), self.nodes.len())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node: self.node_label(&op),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_err(&self, op: &Op, detail: String) -> Error {
        Error::Shape {
            node: self.node_label(op),
            detail,
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMul(a, b);
        let ((m, k), (k2, _)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err(&op, format!("{m}x{k} · {k2}x?")));
        }
        let value = self.value(a).matmul(self.value(b));
        self.push(value, op)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMulNt(a, b);
        let ((_, k), (_, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err(&op, format!("inner dims {k} vs {k2}")));
        }
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(value, op)
    }

    fn same_shape(&self, op: &Op, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(self.shape_err(
                op,
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(a, b);
        self.same_shape(&op, a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(a, b);
        self.same_shape(&op, a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Mul(a, b);
        self.same_shape(&op, a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, op)
    }

    fn row_broadcast(
        &mut self,
        op: Op,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let ((r, c), (rr, rc)) = (self.dims(a), self.dims(row));
        if rr != 1 || rc != c {
            return Err(self.shape_err(&op, format!("{r}x{c} with row {rr}x{rc}")));
        }
        let rv = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for chunk in value.data_mut().chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(&rv) {
                *x = f(*x, b);
            }
        }
        self.push(value, op)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(Op::AddRow(a, row), a, row, |x, b| x + b)
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(Op::MulRow(a, row), a, row, |x, b| x * b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::cos);
        self.push(value, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Per-row standardization without affine parameters:
    /// `(x − mean) / sqrt(var + ε)`.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        let c = value.cols();
        let mut inv_std = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv_std.push(s);
        }
        self.push(value, Op::LayerNormRows { input: a, inv_std })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let op = Op::SliceCols { input: a, start };
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            return Err(self.shape_err(&op, format!("cols {start}..{} of {c}", start + len)));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row_slice(i)[start..start + len]);
        }
        let value = Tensor::matrix(r, len, data)?;
        self.push(value, op)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let op = Op::ConcatCols(parts.to_vec());
        let Some(&first) = parts.first() else {
            return Err(self.shape_err(&op, "nothing to concatenate".into()));
        };
        let r = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(self.shape_err(&op, "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(r, total, data)?;
        self.push(value, op)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let op = Op::ConcatRows(parts.to_vec());
        let Some(&first) = parts.first() else {
            return Err(self.shape_err(&op, "nothing to concatenate".into()));
        };
        let c = self.dims(first).1;
        if parts.iter().any(|&p| self.dims(p).1 != c) {
            return Err(self.shape_err(&op, "column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, c, data)?;
        self.push(value, op)
    }

    /// Column means, `r × c → 1 × c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let src = self.value(a);
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, &x) in data.iter_mut().zip(src.row_slice(i)) {
                *d += x;
            }
        }
        data.iter_mut().for_each(|d| *d /= r as f64);
        let value = Tensor::matrix(1, c, data)?;
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Records a scalar `value` whose gradient with respect to `input` is
    /// `grad` (same shape as `input`).
    pub fn external(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        let shape_ok = grad.shape() == self.value(input).shape();
        let detail = format!(
            "gradient shape {:?} vs input {:?}",
            grad.shape(),
            self.value(input).shape()
        );
        let finite = grad.is_finite();
        let op = Op::External { input, grad };
        if !shape_ok {
            return Err(self.shape_err(&op, detail));
        }
        if !finite {
            return Err(Error::NonFinite {
                node: self.node_label(&op),
            });
        }
        self.push(Tensor::scalar(value), op)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b));
                    let db = self.value(*a).matmul_tn(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_tn(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = column_sums(&g);
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let c = g.cols();
                    let rv = self.value(*row).data();
                    let av = self.value(*a);
                    let mut da = g.clone();
                    for chunk in da.data_mut().chunks_mut(c) {
                        for (x, &b) in chunk.iter_mut().zip(rv) {
                            *x *= b;
                        }
                    }
                    let prod = g.zip_map(av, |x, y| x * y);
                    accumulate(&mut grads, *row, column_sums(&prod));
                    accumulate(&mut grads, *a, da);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g.map(|x| x * f)),
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y)))
                }
                Op::Cos(a) => {
                    let da = g.zip_map(self.value(*a), |x, y| -x * y.sin());
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y)),
                Op::Log(a) => accumulate(&mut grads, *a, g.zip_map(self.value(*a), |x, y| x / y)),
                Op::SoftmaxRows(a) => {
                    let c = out.cols();
                    let mut da = g.clone();
                    for (drow, yrow) in da.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for (d, &y) in drow.iter_mut().zip(yrow) {
                            *d = y * (*d - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNormRows { input, inv_std } => {
                    let c = out.cols();
                    let cf = c as f64;
                    let mut da = g.clone();
                    for ((drow, xhat), &s) in da
                        .data_mut()
                        .chunks_mut(c)
                        .zip(out.data().chunks(c))
                        .zip(inv_std)
                    {
                        let mean_d = drow.iter().sum::<f64>() / cf;
                        let mean_dx = drow.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / cf;
                        for (d, &x) in drow.iter_mut().zip(xhat) {
                            *d = s * (*d - mean_d - x * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::SliceCols { input, start } => {
                    let src = self.value(*input);
                    let (r, c, len) = (src.rows(), src.cols(), g.cols());
                    let mut da = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..len {
                            da.set(i, start + j, g.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let r = g.rows();
                        let mut data = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + pc]);
                        }
                        accumulate(&mut grads, p, Tensor::matrix(r, pc, data)?);
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let data = g.data()[offset * c..(offset + pr) * c].to_vec();
                        accumulate(&mut grads, p, Tensor::matrix(pr, c, data)?);
                        offset += pr;
                    }
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.dims(*a);
                    let mut da = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            da.set(i, j, g.get(0, j) / r as f64);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    let src = self.value(*a);
                    let da = Tensor::new(src.shape().to_vec(), vec![gv; src.len()])?;
                    accumulate(&mut grads, *a, da);
                }
                Op::External { input, grad } => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *input, grad.map(|x| x * gv));
                }
            }
            // Leaves keep their adjoint; intermediates are not exposed.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            named: self.named.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::matrix(1, c, out).expect("non-empty")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log Σ exp(x)`, stable.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        assert_eq!(g.scalar(y), 9.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.by_name("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[5.0, 5.0, 5.0]).unwrap());
        let y = g.layer_norm_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let mut g = Graph::new();
        let z = g.leaf("z", Tensor::row(&[0.0; 4]).unwrap());
        let target = g.constant(Tensor::row(&[1.0, 0.0, 0.0, 0.0]).unwrap());
        let p = g.softmax_rows(z).unwrap();
        let lp = g.log(p).unwrap();
        let t = g.mul(lp, target).unwrap();
        let s = g.sum(t).unwrap();
        let loss = g.scale(s, -1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let dz = grads.by_name("z").unwrap().data();
        for (got, want) in dz.iter().zip([-0.75, 0.25, 0.25, 0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::Shape { node, .. } => assert!(node.starts_with("matmul#")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[0.0]).unwrap());
        let err = g.log(a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref node } if node.starts_with("log#")));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.leaf("a", Tensor::zeros(2, 2));
        assert!(matches!(
            g.backward(a),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(6, 9, 4.0, &mut rng));
        let y = g.softmax_rows(x).unwrap();
        for r in 0..6 {
            let s: f64 = g.value(y).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn layer_norm_moments() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(5, 16, 5.0, &mut rng));
        let y = g.layer_norm_rows(x).unwrap();
        for r in 0..5 {
            let row = g.value(y).row_slice(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() <= 1e-6);
        }
    }
}
