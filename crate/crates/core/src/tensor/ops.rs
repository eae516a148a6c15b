//! Forward operations on plain tensors.
//!
//! The tape in [`super::Tape`] records the same computations through the same
//! kernels, so a value computed here is bit-identical to its recorded twin.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::dim("matmul", a, b)),
    }
}

/// `(c_in, positions)` view of a channel-first tensor of rank ≥ 2.
pub(crate) fn channel_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(op, shape, &[0, 0]));
    }
    Ok((shape[0], shape[1..].iter().product()))
}

pub(crate) fn conv1x1_dims(f: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (c_in, len) = channel_dims("conv1x1", f)?;
    match (w, b) {
        ([c_out, wc_in], [bc]) if *wc_in == c_in && bc == c_out => Ok((*c_out, c_in, len)),
        ([_, wc_in], _) if *wc_in != c_in => Err(Error::dim("conv1x1", f, w)),
        _ => Err(Error::dim("conv1x1", w, b)),
    }
}

pub(crate) fn conv2d_geom(
    x: &[usize],
    w: &[usize],
    b: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, ConvGeom)> {
    let (c, h, wd) = match x {
        [c, h, wd] => (*c, *h, *wd),
        _ => return Err(Error::dim("conv2d", x, w)),
    };
    let (c_out, k) = match w {
        [co, ci, k1, k2] if *ci == c && k1 == k2 => (*co, *k1),
        _ => return Err(Error::dim("conv2d", x, w)),
    };
    if b != [c_out] {
        return Err(Error::dim("conv2d", w, b));
    }
    let out_h = kernels::conv_out_len(h, k, stride, pad);
    let out_w = kernels::conv_out_len(wd, k, stride, pad);
    match (out_h, out_w) {
        (Some(out_h), Some(out_w)) => Ok((
            c_out,
            ConvGeom {
                channels: c,
                height: h,
                width: wd,
                kernel: k,
                stride,
                pad,
                out_h,
                out_w,
            },
        )),
        _ => Err(Error::contract(format!(
            "conv2d: kernel {k} with stride {stride} and pad {pad} does not fit input {x:?}"
        ))),
    }
}

pub(crate) fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric {
            op,
            detail: format!("entry {i} is {}", t.data()[i]),
        }),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; m * n];
    kernels::gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Ok(Tensor::raw(vec![m, n], out))
}

/// Row-wise `softmax(scale · m)`.
pub fn softmax_rows(m: &Tensor, scale: f64) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::contract(format!("softmax scale must be positive, got {scale}")));
    }
    check_finite("softmax_rows", m)?;
    Ok(Tensor::raw(vec![r, c], kernels::softmax_rows(r, c, scale, m.data())))
}

/// Pointwise convolution over a channel-first tensor `f[C_in × …]`.
///
/// Computed as `matmul(w, f)` followed by a bias broadcast, so it agrees with
/// that formulation exactly.
pub fn conv1x1(f: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_out, c_in, len) = conv1x1_dims(f.shape(), w.shape(), bias.shape())?;
    let mut out = vec![0.0; c_out * len];
    kernels::gemm_nn(c_out, c_in, len, w.data(), f.data(), &mut out);
    add_channel_bias(&mut out, bias.data(), len);
    let mut shape = f.shape().to_vec();
    shape[0] = c_out;
    Ok(Tensor::raw(shape, out))
}

pub(crate) fn add_channel_bias(out: &mut [f64], bias: &[f64], len: usize) {
    for (row, &b) in out.chunks_mut(len).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

/// Square-kernel convolution with stride and zero padding on `x[C×H×W]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (c_out, g) = conv2d_geom(x.shape(), w.shape(), bias.shape(), stride, pad)?;
    let cols = kernels::im2col(&g, x.data());
    let mut out = vec![0.0; c_out * g.positions()];
    kernels::gemm_nn(c_out, g.patch_len(), g.positions(), w.data(), &cols, &mut out);
    add_channel_bias(&mut out, bias.data(), g.positions());
    Ok(Tensor::raw(vec![c_out, g.out_h, g.out_w], out))
}

/// Mean over every non-channel position of `f[C × …]`.
pub fn global_avg_pool(f: &Tensor) -> Result<Tensor> {
    let (c, len) = match f.shape() {
        [_] => return Err(Error::EmptyInput { op: "global_avg_pool" }),
        s => channel_dims("global_avg_pool", s)?,
    };
    Ok(Tensor::raw(
        vec![c],
        f.data().chunks(len).map(|row| row.iter().sum::<f64>() / len as f64).collect(),
    ))
}

pub fn transpose(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2()?;
    Ok(Tensor::raw(vec![c, r], kernels::transpose(r, c, m.data())))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(kernels::sigmoid)
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let first = shapes.first().ok_or(Error::EmptyInput { op: "concat" })?;
    if axis >= first.len() {
        return Err(Error::contract(format!("concat axis {axis} out of range for {first:?}")));
    }
    let mut out = first.to_vec();
    out[axis] = 0;
    for s in shapes {
        let compatible = s.len() == first.len()
            && s.iter().zip(first.iter()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::dim("concat", first, s));
        }
        out[axis] += s[axis];
    }
    Ok(out)
}

pub(crate) fn concat_data(parts: &[&Tensor], axis: usize, out_shape: &[usize]) -> Vec<f64> {
    let (outer, _, inner) = axis_split(out_shape, axis);
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    out
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
    let shape = concat_shape(&shapes, axis)?;
    let data = concat_data(parts, axis, &shape);
    Ok(Tensor::raw(shape, data))
}

pub(crate) fn slice_data(t: &Tensor, axis: usize, start: usize, len: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(t.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    out
}

pub(crate) fn check_slice(shape: &[usize], axis: usize, start: usize, len: usize) -> Result<Vec<usize>> {
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::contract(format!(
            "slice [{start}, {}) along axis {axis} out of range for {shape:?}",
            start + len
        )));
    }
    let mut out = shape.to_vec();
    out[axis] = len;
    Ok(out)
}

/// Contiguous range `[start, start+len)` along `axis`.
pub fn slice(t: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let shape = check_slice(t.shape(), axis, start, len)?;
    Ok(Tensor::raw(shape, slice_data(t, axis, start, len)))
}
