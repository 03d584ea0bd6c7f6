use crate::error::{Error, Result};

use super::tensor::{stable_sum, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanCols(Var),
    Select(Var, usize),
    MulElem(Var, Var),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Record of forward operations; inputs always precede their consumers, so a
/// single reverse sweep accumulates all gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients with respect to tape variables, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn raw_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(vec![m, n]);
    let mut buf = Vec::with_capacity(k);
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                buf.push(a.at(i, p) * b.at(p, j));
            }
            out.set(i, j, stable_sum(&mut buf));
        }
    }
    out
}

fn raw_transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(vec![n, m]);
    for i in 0..m {
        for j in 0..n {
            out.set(j, i, a.at(i, j));
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, delta: &Tensor) {
    match slot {
        Some(g) => {
            for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                *gi += di;
            }
        }
        None => *slot = Some(delta.clone()),
    }
}

/// Iterates the `axis`-aligned slices of a 2D tensor as flat index lists.
/// axis = 1 yields rows, axis = 0 yields columns.
fn axis_slices(shape: &[usize], axis: usize) -> Vec<Vec<usize>> {
    let (rows, cols) = (shape[0], shape[1]);
    if axis == 1 {
        (0..rows)
            .map(|r| (0..cols).map(|c| r * cols + c).collect())
            .collect()
    } else {
        (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    fn require_matrix(&self, v: Var) -> Result<()> {
        if !self.value(v).is_matrix() {
            return Err(Error::Shape(format!(
                "expected 2D tensor, got shape {:?}",
                self.value(v).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_matrix(a)?;
        self.require_matrix(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let value = raw_matmul(ta, tb);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::Shape(format!(
                "add shapes disagree: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Scale(a, c), value)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| -x).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Neg(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(Op::Relu(a), value)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::Shape(format!(
                "elementwise mul shapes disagree: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MulElem(a, b), value))
    }

    /// Numerically stable softmax along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.require_matrix(a)?;
        if axis > 1 {
            return Err(Error::Shape(format!("softmax axis {axis} out of range for 2D tensor")));
        }
        let ta = self.value(a);
        let mut out = ta.clone();
        let mut buf = Vec::new();
        for slice in axis_slices(ta.shape(), axis) {
            let m = slice.iter().map(|&i| ta.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            for &i in &slice {
                out.data_mut()[i] = (ta.data()[i] - m).exp();
            }
            buf.extend(slice.iter().map(|&i| out.data()[i]));
            let s = stable_sum(&mut buf);
            for &i in &slice {
                out.data_mut()[i] /= s;
            }
        }
        Ok(self.push(Op::Softmax(a, axis), out))
    }

    /// log(softmax(x)) along `axis`, computed without forming the softmax.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.require_matrix(a)?;
        if axis > 1 {
            return Err(Error::Shape(format!(
                "log_softmax axis {axis} out of range for 2D tensor"
            )));
        }
        let ta = self.value(a);
        let mut out = ta.clone();
        let mut buf = Vec::new();
        for slice in axis_slices(ta.shape(), axis) {
            let m = slice.iter().map(|&i| ta.data()[i]).fold(f64::NEG_INFINITY, f64::max);
            buf.extend(slice.iter().map(|&i| (ta.data()[i] - m).exp()));
            let lse = m + stable_sum(&mut buf).ln();
            for &i in &slice {
                out.data_mut()[i] = ta.data()[i] - lse;
            }
        }
        Ok(self.push(Op::LogSoftmax(a, axis), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.require_matrix(a)?;
        let value = raw_transpose(self.value(a));
        Ok(self.push(Op::Transpose(a), value))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows of zero tensors".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.require_matrix(p)?;
            let tp = self.value(p);
            if tp.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat_rows column counts disagree: {} vs {}",
                    cols,
                    tp.cols()
                )));
            }
            rows += tp.rows();
            data.extend_from_slice(tp.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    /// Stacks matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero tensors".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            self.require_matrix(p)?;
            let tp = self.value(p);
            if tp.rows() != rows {
                return Err(Error::Shape(format!(
                    "concat_cols row counts disagree: {} vs {}",
                    rows,
                    tp.rows()
                )));
            }
            total_cols += tp.cols();
        }
        let mut out = Tensor::zeros(vec![rows, total_cols]);
        let mut offset = 0;
        for &p in parts {
            let tp = self.value(p).clone();
            for r in 0..rows {
                for c in 0..tp.cols() {
                    out.set(r, offset + c, tp.at(r, c));
                }
            }
            offset += tp.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Row-wise mean: [m, n] -> [m, 1].
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        self.require_matrix(a)?;
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = Tensor::zeros(vec![m, 1]);
        let mut buf = Vec::with_capacity(n);
        for i in 0..m {
            buf.extend((0..n).map(|j| ta.at(i, j)));
            out.set(i, 0, stable_sum(&mut buf) / n as f64);
        }
        Ok(self.push(Op::MeanCols(a), out))
    }

    /// Picks a single element (flat row-major index) as a [1, 1] tensor.
    pub fn select(&mut self, a: Var, flat_index: usize) -> Result<Var> {
        let ta = self.value(a);
        if flat_index >= ta.numel() {
            return Err(Error::Shape(format!(
                "select index {} out of bounds for {} elements",
                flat_index,
                ta.numel()
            )));
        }
        let value = Tensor::scalar(ta.data()[flat_index]);
        Ok(self.push(Op::Select(a, flat_index), value))
    }

    /// Sum of all elements as a [1, 1] tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut buf: Vec<f64> = self.value(a).data().to_vec();
        let value = Tensor::scalar(stable_sum(&mut buf));
        self.push(Op::Sum(a), value)
    }

    /// Reverse sweep from a scalar output; returns gradients for every
    /// variable that influences it.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let bt = raw_transpose(self.value(*b));
                    let at = raw_transpose(self.value(*a));
                    accumulate(&mut grads[a.0], &raw_matmul(&g, &bt));
                    accumulate(&mut grads[b.0], &raw_matmul(&at, &g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Scale(a, c) => {
                    let mut d = g.clone();
                    for x in d.data_mut() {
                        *x *= c;
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Neg(a) => {
                    let mut d = g.clone();
                    for x in d.data_mut() {
                        *x = -*x;
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Relu(a) => {
                    // Subgradient 0 at exactly 0.
                    let input = self.value(*a);
                    let mut d = g.clone();
                    for (x, inp) in d.data_mut().iter_mut().zip(input.data()) {
                        if *inp <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::MulElem(a, b) => {
                    let (ta, tb) = (self.value(*a).clone(), self.value(*b).clone());
                    let mut da = g.clone();
                    for (x, y) in da.data_mut().iter_mut().zip(tb.data()) {
                        *x *= y;
                    }
                    let mut db = g.clone();
                    for (x, y) in db.data_mut().iter_mut().zip(ta.data()) {
                        *x *= y;
                    }
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Softmax(a, axis) => {
                    let y = &self.nodes[idx].value;
                    let mut d = Tensor::zeros(y.shape().to_vec());
                    for slice in axis_slices(y.shape(), *axis) {
                        let dot: f64 = slice.iter().map(|&i| g.data()[i] * y.data()[i]).sum();
                        for &i in &slice {
                            d.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::LogSoftmax(a, axis) => {
                    let y = &self.nodes[idx].value;
                    let mut d = Tensor::zeros(y.shape().to_vec());
                    for slice in axis_slices(y.shape(), *axis) {
                        let gsum: f64 = slice.iter().map(|&i| g.data()[i]).sum();
                        for &i in &slice {
                            d.data_mut()[i] = g.data()[i] - y.data()[i].exp() * gsum;
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads[a.0], &raw_transpose(&g));
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut row_offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let mut d = Tensor::zeros(vec![rows, cols]);
                        for r in 0..rows {
                            for c in 0..cols {
                                d.set(r, c, g.at(row_offset + r, c));
                            }
                        }
                        accumulate(&mut grads[p.0], &d);
                        row_offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut col_offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut d = Tensor::zeros(vec![rows, cols]);
                        for r in 0..rows {
                            for c in 0..cols {
                                d.set(r, c, g.at(r, col_offset + c));
                            }
                        }
                        accumulate(&mut grads[p.0], &d);
                        col_offset += cols;
                    }
                }
                Op::MeanCols(a) => {
                    let ta = self.value(*a);
                    let (m, n) = (ta.rows(), ta.cols());
                    let mut d = Tensor::zeros(vec![m, n]);
                    for i in 0..m {
                        let gi = g.at(i, 0) / n as f64;
                        for j in 0..n {
                            d.set(i, j, gi);
                        }
                    }
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Select(a, flat) => {
                    let mut d = Tensor::zeros(self.value(*a).shape().to_vec());
                    d.data_mut()[*flat] = g.item();
                    accumulate(&mut grads[a.0], &d);
                }
                Op::Sum(a) => {
                    let mut d = Tensor::zeros(self.value(*a).shape().to_vec());
                    let gi = g.item();
                    for x in d.data_mut() {
                        *x = gi;
                    }
                    accumulate(&mut grads[a.0], &d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
