use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
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
    Conv1x1 { f: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<f64> },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Abs(Var),
    SoftmaxRows { x: Var, scale: f64 },
    LogSoftmaxRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    GlobalAvgPool(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MulChannel { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    GatherRows { x: Var, rows: Vec<usize> },
    Resize { x: Var, ry: Vec<f64>, rx: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Inputs always precede outputs, so a reverse sweep over the node list is a
/// reverse topological order. A tape is single-owner; build one per forward
/// pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf that was recorded with `requires_grad`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(value, op, needs)
    }

    /// Records a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.tracked())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn conv1x1(&mut self, f: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::conv1x1(self.value(f), self.value(w), self.value(b))?;
        Ok(self.push_op(out, Op::Conv1x1 { f, w, b }, &[f, w, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_out, geom) =
            ops::conv2d_geom(self.shape(x), self.shape(w), self.shape(b), stride, pad)?;
        let cols = kernels::im2col(&geom, self.value(x).data());
        let mut out = vec![0.0; c_out * geom.positions()];
        kernels::gemm_nn(
            c_out,
            geom.patch_len(),
            geom.positions(),
            self.value(w).data(),
            &cols,
            &mut out,
        );
        ops::add_channel_bias(&mut out, self.value(b).data(), geom.positions());
        let value = Tensor::raw(vec![c_out, geom.out_h, geom.out_w], out);
        Ok(self.push_op(value, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push_op(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push_op(out, Op::Sigmoid(x), &[x])
    }

    /// `ln(1 + eˣ)`.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::softplus);
        self.push_op(out, Op::Softplus(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.data().iter().any(|&t| t <= 0.0) {
            return Err(Error::Numeric {
                op: "log",
                detail: "non-positive argument".into(),
            });
        }
        let out = v.map(libm::log);
        Ok(self.push_op(out, Op::Log(x), &[x]))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::fabs);
        self.push_op(out, Op::Abs(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var, scale: f64) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x), scale)?;
        Ok(self.push_op(out, Op::SoftmaxRows { x, scale }, &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = v.dims2()?;
        ops::check_finite("log_softmax_rows", v)?;
        let out = Tensor::raw(vec![r, c], kernels::log_softmax_rows(r, c, v.data()));
        Ok(self.push_op(out, Op::LogSoftmaxRows(x), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat(&tensors, axis)?;
        Ok(self.push_op(out, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = ops::slice(self.value(x), axis, start, len)?;
        Ok(self.push_op(out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Splits `x` into consecutive pieces of the given sizes along `axis`.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if axis >= self.shape(x).len() || total != self.shape(x)[axis] {
            return Err(Error::contract(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {:?}",
                self.shape(x)
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(x, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = ops::transpose(self.value(x))?;
        Ok(self.push_op(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(x), &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        Ok(self.push_op(out, Op::GlobalAvgPool(x), &[x]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(name, va.shape(), vb.shape()));
        }
        let out = va.zip_map(vb, f)?;
        Ok(self.push_op(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::Numeric {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Maximum(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push_op(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push_op(out, Op::AddScalar(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_op(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push_op(out, Op::Mean(x), &[x])
    }

    /// `x[C × …] ⊙ w[C]` broadcast over every non-channel position.
    pub fn mul_channel(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, len) = ops::channel_dims("mul_channel", self.shape(x))?;
        if self.shape(w) != [c] {
            return Err(Error::dim("mul_channel", self.shape(x), self.shape(w)));
        }
        let wv = self.value(w).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(len)
            .zip(wv)
            .flat_map(|(row, &s)| row.iter().map(move |&v| v * s))
            .collect();
        let out = Tensor::raw(xv.shape().to_vec(), data);
        Ok(self.push_op(out, Op::MulChannel { x, w }, &[x, w]))
    }

    /// `x[N×M] + b[M]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.value(x).dims2()?;
        if self.shape(b) != [m] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(bv).map(|(v, b)| v + b))
            .collect();
        let out = Tensor::raw(xv.shape().to_vec(), data);
        Ok(self.push_op(out, Op::AddBias { x, b }, &[x, b]))
    }

    /// Linear layer on row vectors: `x[N×in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    /// Selects rows (first-axis entries) of `x`, repetition allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.shape()[0];
        if rows.is_empty() {
            return Err(Error::EmptyInput { op: "gather_rows" });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::contract(format!("gather_rows: row {r} out of range for {n}")));
        }
        let inner = xv.len() / n;
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&xv.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = rows.len();
        let out = Tensor::raw(shape, data);
        Ok(self.push_op(out, Op::GatherRows { x, rows: rows.to_vec() }, &[x]))
    }

    /// Bilinear resize (half-pixel centres) of `x[C×H×W]` to `out_h×out_w`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = match self.shape(x) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::dim("resize_bilinear", s, &[0, out_h, out_w])),
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::EmptyInput { op: "resize_bilinear" });
        }
        let ry = kernels::interp_matrix(h, out_h);
        let rx = kernels::interp_matrix(w, out_w);
        let data = kernels::resize_channels(c, (h, w), (out_h, out_w), &ry, &rx, self.value(x).data());
        let out = Tensor::raw(vec![c, out_h, out_w], data);
        Ok(self.push_op(out, Op::Resize { x, ry, rx }, &[x]))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g
                .data_mut()
                .iter_mut()
                .zip(data)
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(Tensor::raw(self.shape(v).to_vec(), data)),
        }
    }

    /// Reverse sweep from a scalar output.
    ///
    /// Every leaf recorded with `requires_grad` receives a gradient of its
    /// own shape; leaves the output does not depend on get zeros.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.needs(output) {
            grads[output.0] = Some(Tensor::raw(self.shape(output).to_vec(), vec![1.0]));
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            if let Some(g) = grads[i].take() {
                self.propagate(&node.op, &node.value, g.data(), &mut grads);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v).data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm_nt(m, n, k, g, val(*b), &mut da);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm_tn(k, m, n, val(*a), g, &mut db);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv1x1 { f, w, b } => {
                let (c_out, c_in) = (self.shape(*w)[0], self.shape(*w)[1]);
                let len = self.value(*f).len() / c_in;
                if self.needs(*f) {
                    let mut df = vec![0.0; c_in * len];
                    kernels::gemm_tn(c_in, c_out, len, val(*w), g, &mut df);
                    self.accumulate(grads, *f, df);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; c_out * c_in];
                    kernels::gemm_nt(c_out, len, c_in, g, val(*f), &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*b) {
                    let db = g.chunks(len).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let c_out = self.shape(*w)[0];
                let (k, p) = (geom.patch_len(), geom.positions());
                if self.needs(*x) {
                    let mut dcols = vec![0.0; k * p];
                    kernels::gemm_tn(k, c_out, p, val(*w), g, &mut dcols);
                    let mut dx = vec![0.0; self.value(*x).len()];
                    kernels::col2im(geom, &dcols, &mut dx);
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; c_out * k];
                    kernels::gemm_nt(c_out, p, k, g, cols, &mut dw);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*b) {
                    let db = g.chunks(p).map(|r| r.iter().sum()).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = out.data().iter().zip(g).map(|(&y, &gi)| gi * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| gi * kernels::sigmoid(v))
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Log(x) => {
                let d = val(*x).iter().zip(g).map(|(&v, &gi)| gi / v).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Abs(x) => {
                let d = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| {
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::SoftmaxRows { x, scale } => {
                let cols = out.shape()[1];
                let mut d = vec![0.0; g.len()];
                for ((drow, yrow), grow) in d.chunks_mut(cols).zip(out.data().chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, gi)| y * gi).sum();
                    for ((dj, &y), &gj) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dj = scale * y * (gj - dot);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::LogSoftmaxRows(x) => {
                let cols = out.shape()[1];
                let mut d = vec![0.0; g.len()];
                for ((drow, yrow), grow) in d.chunks_mut(cols).zip(out.data().chunks(cols)).zip(g.chunks(cols)) {
                    let total: f64 = grow.iter().sum();
                    for ((dj, &y), &gj) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dj = gj - libm::exp(y) * total;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = ops::axis_split(out.shape(), *axis);
                let row = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * row + offset..o * row + offset + block]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = ops::axis_split(self.shape(*x), *axis);
                let len = out.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[0], out.shape()[1]);
                self.accumulate(grads, *x, kernels::transpose(r, c, g));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::GlobalAvgPool(x) => {
                let len = self.value(*x).len() / g.len();
                let d = g
                    .iter()
                    .flat_map(|&gc| core::iter::repeat(gc / len as f64).take(len))
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.iter().zip(val(*b)).map(|(gi, bv)| gi * bv).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.iter().zip(val(*a)).map(|(gi, av)| gi * av).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Div(a, b) => {
                if self.needs(*a) {
                    let d = g.iter().zip(val(*b)).map(|(gi, bv)| gi / bv).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g
                        .iter()
                        .zip(out.data())
                        .zip(val(*b))
                        .map(|((gi, q), bv)| -gi * q / bv)
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let pick_a: Vec<bool> = val(*a).iter().zip(out.data()).map(|(x, o)| x == o).collect();
                let da = g.iter().zip(&pick_a).map(|(&gi, &p)| if p { gi } else { 0.0 }).collect();
                let db = g.iter().zip(&pick_a).map(|(&gi, &p)| if p { 0.0 } else { gi }).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::MulChannel { x, w } => {
                let c = self.shape(*w)[0];
                let len = g.len() / c;
                if self.needs(*x) {
                    let d = g
                        .chunks(len)
                        .zip(val(*w))
                        .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
                        .collect();
                    self.accumulate(grads, *x, d);
                }
                if self.needs(*w) {
                    let d = g
                        .chunks(len)
                        .zip(val(*x).chunks(len))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *w, d);
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, g.to_vec());
                if self.needs(*b) {
                    let m = self.shape(*b)[0];
                    let mut d = vec![0.0; m];
                    for row in g.chunks(m) {
                        d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let inner = xv.len() / xv.shape()[0];
                let mut d = vec![0.0; xv.len()];
                for (k, &r) in rows.iter().enumerate() {
                    d[r * inner..(r + 1) * inner]
                        .iter_mut()
                        .zip(&g[k * inner..(k + 1) * inner])
                        .for_each(|(a, v)| *a += v);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Resize { x, ry, rx } => {
                let s = self.shape(*x);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (out.shape()[1], out.shape()[2]);
                let d = kernels::resize_channels_adjoint(c, (h, w), (oh, ow), ry, rx, g);
                self.accumulate(grads, *x, d);
            }
        }
    }
}
