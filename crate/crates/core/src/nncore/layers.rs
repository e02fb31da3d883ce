//! Forward and backward kernels for every layer kind.
//!
//! Conventions: dense weights are `[out x in]` row-major followed by the bias;
//! conv weights are `[out_c x in_c x kh x kw]` followed by one bias per output
//! channel. Backward functions return the gradient w.r.t. the layer input and
//! accumulate parameter gradients into a caller-provided buffer.

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

fn dims_of(x: &Tensor, in_dim: usize, what: &str) -> Result<usize> {
    if x.row_len() != in_dim {
        return Err(Error::dim(format!(
            "{what} expects rows of {in_dim}, got shape {:?}",
            x.shape()
        )));
    }
    Ok(x.rows())
}

/// `y = x W^T + b` applied to every row of `x`.
pub fn dense_forward(
    x: &Tensor,
    weights: &[f64],
    bias: &[f64],
    in_dim: usize,
    out_dim: usize,
) -> Result<Tensor> {
    let n = dims_of(x, in_dim, "dense")?;
    if weights.len() != in_dim * out_dim || bias.len() != out_dim {
        return Err(Error::dim("dense parameter size"));
    }
    let mut y = vec![0.0; n * out_dim];
    for row in y.chunks_exact_mut(out_dim) {
        row.copy_from_slice(bias);
    }
    gemm(
        MatRef::row_major(x.values(), n, in_dim),
        MatRef::transposed(weights, in_dim, out_dim),
        &mut y,
        1.0,
    );
    Tensor::new(vec![n, out_dim], y)
}

/// Returns the input gradient and accumulates `[dW | db]` into `param_grad`.
pub fn dense_backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &[f64],
    in_dim: usize,
    out_dim: usize,
    param_grad: &mut [f64],
) -> Result<Tensor> {
    let n = dims_of(x, in_dim, "dense")?;
    if grad_out.rows() != n || grad_out.row_len() != out_dim {
        return Err(Error::dim("dense gradient shape"));
    }
    if param_grad.len() != in_dim * out_dim + out_dim {
        return Err(Error::dim("dense gradient buffer"));
    }
    let g = grad_out.values();
    let (gw, gb) = param_grad.split_at_mut(in_dim * out_dim);
    gemm(
        MatRef::transposed(g, out_dim, n),
        MatRef::row_major(x.values(), n, in_dim),
        gw,
        1.0,
    );
    for row in g.chunks_exact(out_dim) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut gx = vec![0.0; n * in_dim];
    gemm(
        MatRef::row_major(g, n, out_dim),
        MatRef::row_major(weights, out_dim, in_dim),
        &mut gx,
        0.0,
    );
    Tensor::new(x.shape().to_vec(), gx)
}

/// Geometry of a valid (unpadded) 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel_h > h || self.kernel_w > w {
            return Err(Error::dim(format!(
                "kernel {}x{} larger than input {h}x{w}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (h - self.kernel_h) / self.stride + 1,
            (w - self.kernel_w) / self.stride + 1,
        ))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Splits a `[N, C, H, W]` or `[C, H, W]` shape into its parts.
fn image_dims(x: &Tensor, channels: Option<usize>) -> Result<(usize, usize, usize, usize, bool)> {
    let s = x.shape();
    let (n, c, h, w, batched) = match s.len() {
        3 => (1, s[0], s[1], s[2], false),
        4 => (s[0], s[1], s[2], s[3], true),
        _ => return Err(Error::dim(format!("expected image tensor, got {s:?}"))),
    };
    if let Some(expected) = channels {
        if c != expected {
            return Err(Error::dim(format!("expected {expected} channels, got {c}")));
        }
    }
    Ok((n, c, h, w, batched))
}

fn image_shape(batched: bool, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

/// Unfolds one image into `[C*kh*kw x H'*W']` columns.
fn im2col(img: &[f64], g: &ConvGeometry, h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f64]) {
    let p = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let src_row = (c * h + oy * g.stride + ky) * w;
                    for ox in 0..ow {
                        dst[oy * ow + ox] = img[src_row + ox * g.stride + kx];
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeometry, h: usize, w: usize, oh: usize, ow: usize, img: &mut [f64]) {
    let p = oh * ow;
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..oh {
                    let dst_row = (c * h + oy * g.stride + ky) * w;
                    for ox in 0..ow {
                        img[dst_row + ox * g.stride + kx] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor, weights: &[f64], bias: &[f64], g: &ConvGeometry) -> Result<Tensor> {
    let (n, _, h, w, batched) = image_dims(x, Some(g.in_channels))?;
    let (oh, ow) = g.output_hw(h, w)?;
    let k = g.patch_len();
    if weights.len() != g.out_channels * k || bias.len() != g.out_channels {
        return Err(Error::dim("conv2d parameter size"));
    }
    let p = oh * ow;
    let in_size = g.in_channels * h * w;
    let out_size = g.out_channels * p;
    let mut out = vec![0.0; n * out_size];
    let mut cols = vec![0.0; k * p];
    for i in 0..n {
        im2col(&x.values()[i * in_size..(i + 1) * in_size], g, h, w, oh, ow, &mut cols);
        let y = &mut out[i * out_size..(i + 1) * out_size];
        for (o, chunk) in y.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            MatRef::row_major(weights, g.out_channels, k),
            MatRef::row_major(&cols, k, p),
            y,
            1.0,
        );
    }
    Tensor::new(image_shape(batched, n, g.out_channels, oh, ow), out)
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    x: &Tensor,
    weights: &[f64],
    g: &ConvGeometry,
    param_grad: &mut [f64],
) -> Result<Tensor> {
    let (n, _, h, w, _) = image_dims(x, Some(g.in_channels))?;
    let (oh, ow) = g.output_hw(h, w)?;
    let k = g.patch_len();
    let p = oh * ow;
    if grad_out.len() != n * g.out_channels * p {
        return Err(Error::dim("conv2d gradient shape"));
    }
    if param_grad.len() != g.out_channels * k + g.out_channels {
        return Err(Error::dim("conv2d gradient buffer"));
    }
    let in_size = g.in_channels * h * w;
    let out_size = g.out_channels * p;
    let (gw, gb) = param_grad.split_at_mut(g.out_channels * k);
    let mut gx = vec![0.0; x.len()];
    let mut cols = vec![0.0; k * p];
    let mut gcols = vec![0.0; k * p];
    for i in 0..n {
        let go = &grad_out.values()[i * out_size..(i + 1) * out_size];
        im2col(&x.values()[i * in_size..(i + 1) * in_size], g, h, w, oh, ow, &mut cols);
        gemm(
            MatRef::row_major(go, g.out_channels, p),
            MatRef::transposed(&cols, p, k),
            gw,
            1.0,
        );
        for (o, chunk) in go.chunks_exact(p).enumerate() {
            gb[o] += chunk.iter().sum::<f64>();
        }
        gemm(
            MatRef::transposed(weights, k, g.out_channels),
            MatRef::row_major(go, g.out_channels, p),
            &mut gcols,
            0.0,
        );
        col2im(&gcols, g, h, w, oh, ow, &mut gx[i * in_size..(i + 1) * in_size]);
    }
    Tensor::new(x.shape().to_vec(), gx)
}

fn pool_dims(x: &Tensor, pool_h: usize, pool_w: usize) -> Result<(usize, usize, usize, usize, bool)> {
    let dims = image_dims(x, None)?;
    let (_, _, h, w, _) = dims;
    if pool_h == 0 || pool_w == 0 || h % pool_h != 0 || w % pool_w != 0 {
        return Err(Error::dim(format!(
            "pool {pool_h}x{pool_w} does not divide input {h}x{w}"
        )));
    }
    Ok(dims)
}

/// Row-major index of the first maximum in each pooling window.
fn pool_argmax(x: &Tensor, pool_h: usize, pool_w: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (n, c, h, w, batched) = pool_dims(x, pool_h, pool_w)?;
    let (oh, ow) = (h / pool_h, w / pool_w);
    let v = x.values();
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * pool_h * w + ox * pool_w;
                for dy in 0..pool_h {
                    for dx in 0..pool_w {
                        let j = base + (oy * pool_h + dy) * w + ox * pool_w + dx;
                        if v[j] > v[best] {
                            best = j;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((idx, image_shape(batched, n, c, oh, ow)))
}

pub fn maxpool2d_forward(x: &Tensor, pool_h: usize, pool_w: usize) -> Result<Tensor> {
    let (idx, shape) = pool_argmax(x, pool_h, pool_w)?;
    let v = x.values();
    Tensor::new(shape, idx.iter().map(|&i| v[i]).collect())
}

/// Routes each output gradient to the first maximum of its window.
pub fn maxpool2d_backward(grad_out: &Tensor, x: &Tensor, pool_h: usize, pool_w: usize) -> Result<Tensor> {
    let (idx, _) = pool_argmax(x, pool_h, pool_w)?;
    if grad_out.len() != idx.len() {
        return Err(Error::dim("maxpool gradient shape"));
    }
    let mut gx = vec![0.0; x.len()];
    for (&i, g) in idx.iter().zip(grad_out.values()) {
        gx[i] += g;
    }
    Tensor::new(x.shape().to_vec(), gx)
}

fn clamp_index(t: usize, offset: i32, len: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, len as i64 - 1) as usize
}

/// Splices rows `t + o` for every offset, clamping at the sequence edges.
pub fn timedelay_forward(x: &Tensor, offsets: &[i32], in_dim: usize) -> Result<Tensor> {
    let t_len = dims_of(x, in_dim, "timedelay")?;
    if t_len == 0 {
        return Err(Error::dim("timedelay needs at least one frame"));
    }
    let k = offsets.len();
    let mut out = Vec::with_capacity(t_len * k * in_dim);
    for t in 0..t_len {
        for &o in offsets {
            out.extend_from_slice(x.row(clamp_index(t, o, t_len)));
        }
    }
    Tensor::new(vec![t_len, k * in_dim], out)
}

pub fn timedelay_backward(grad_out: &Tensor, x: &Tensor, offsets: &[i32], in_dim: usize) -> Result<Tensor> {
    let t_len = dims_of(x, in_dim, "timedelay")?;
    let k = offsets.len();
    if grad_out.rows() != t_len || grad_out.row_len() != k * in_dim {
        return Err(Error::dim("timedelay gradient shape"));
    }
    let mut gx = vec![0.0; x.len()];
    for t in 0..t_len {
        let g = grad_out.row(t);
        for (j, &o) in offsets.iter().enumerate() {
            let src = clamp_index(t, o, t_len);
            for (d, v) in gx[src * in_dim..(src + 1) * in_dim]
                .iter_mut()
                .zip(&g[j * in_dim..(j + 1) * in_dim])
            {
                *d += v;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), gx)
}

fn group_norm(xs: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        xs.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        xs.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Per-group `l_p` norms: `[N x d] -> [N x d/group_size]`.
pub fn pnorm_forward(x: &Tensor, group_size: usize, p: f64) -> Result<Tensor> {
    let d = x.row_len();
    if group_size == 0 || d % group_size != 0 {
        return Err(Error::dim(format!(
            "pnorm input dim {d} not divisible by group size {group_size}"
        )));
    }
    let out = x
        .values()
        .chunks_exact(group_size)
        .map(|g| group_norm(g, p))
        .collect();
    Tensor::new(vec![x.rows(), d / group_size], out)
}

/// Gradient is zero for a group whose norm is exactly zero.
pub fn pnorm_backward(grad_out: &Tensor, x: &Tensor, y: &Tensor, group_size: usize, p: f64) -> Result<Tensor> {
    if grad_out.len() != y.len() || x.len() != y.len() * group_size {
        return Err(Error::dim("pnorm gradient shape"));
    }
    let mut gx = vec![0.0; x.len()];
    for (((gxs, xs), &yv), &g) in gx
        .chunks_exact_mut(group_size)
        .zip(x.values().chunks_exact(group_size))
        .zip(y.values())
        .zip(grad_out.values())
    {
        if yv == 0.0 {
            continue;
        }
        if p == 2.0 {
            for (d, v) in gxs.iter_mut().zip(xs) {
                *d = g * v / yv;
            }
        } else {
            let denom = yv.powf(p - 1.0);
            for (d, v) in gxs.iter_mut().zip(xs) {
                *d = g * v.signum() * v.abs().powf(p - 1.0) / denom;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), gx)
}

/// `y = (x - shift) * scale`, column-wise over rows of `shift.len()` values.
pub fn standardize_forward(x: &Tensor, shift: &[f64], scale: &[f64]) -> Result<Tensor> {
    dims_of(x, shift.len(), "standardize")?;
    let d = shift.len();
    let v = x
        .values()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(shift).zip(scale).map(|((v, m), s)| (v - m) * s))
        .collect();
    Tensor::new(x.shape().to_vec(), v)
}

/// Input gradient only; the statistics are not trained.
pub fn standardize_backward(grad_out: &Tensor, scale: &[f64]) -> Result<Tensor> {
    if grad_out.row_len() != scale.len() {
        return Err(Error::dim("standardize gradient shape"));
    }
    let v = grad_out
        .values()
        .chunks_exact(scale.len())
        .flat_map(|row| row.iter().zip(scale).map(|(g, s)| g * s))
        .collect();
    Tensor::new(grad_out.shape().to_vec(), v)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let v = x.values().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), v).expect("same shape")
}

pub fn relu_backward(grad_out: &Tensor, x: &Tensor) -> Result<Tensor> {
    if grad_out.len() != x.len() {
        return Err(Error::dim("relu gradient shape"));
    }
    let v = grad_out
        .values()
        .iter()
        .zip(x.values())
        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), v)
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax over the trailing axes.
pub fn softmax_forward(x: &Tensor) -> Tensor {
    let w = x.row_len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.values().chunks_exact(w) {
        out.extend(softmax(row));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

pub fn softmax_backward(grad_out: &Tensor, y: &Tensor) -> Result<Tensor> {
    if grad_out.len() != y.len() {
        return Err(Error::dim("softmax gradient shape"));
    }
    let w = y.row_len();
    let mut gx = Vec::with_capacity(y.len());
    for (g, s) in grad_out.values().chunks_exact(w).zip(y.values().chunks_exact(w)) {
        let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
        gx.extend(g.iter().zip(s).map(|(gi, si)| si * (gi - dot)));
    }
    Tensor::new(y.shape().to_vec(), gx)
}

/// `-ln softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Label(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - log_z).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean cross-entropy over the labelled rows of `logits`; unlabelled rows get
/// zero gradient.
pub fn batch_cross_entropy(logits: &Tensor, labels: &[Option<usize>]) -> Result<(f64, Tensor, usize)> {
    if labels.len() != logits.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    let k = logits.row_len();
    let counted = labels.iter().filter(|l| l.is_some()).count();
    let scale = if counted > 0 { 1.0 / counted as f64 } else { 0.0 };
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if let Some(label) = *label {
            let (loss, g) = softmax_cross_entropy(logits.row(i), label)?;
            total += loss;
            for (d, v) in grad[i * k..(i + 1) * k].iter_mut().zip(g) {
                *d = v * scale;
            }
        }
    }
    Ok((total * scale, Tensor::new(logits.shape().to_vec(), grad)?, counted))
}
