//! Forward and backward kernels for the supported layer set.
//!
//! Inner products accumulate in `f64` and are stored back as `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{FadsError, Result};
use crate::tensor::Tensor;

/// How ReLU units propagate gradients in [`relu_backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Pass the gradient wherever the forward input was positive.
    Vanilla,
    /// Additionally require the incoming gradient to be positive.
    Guided,
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output spatial extent of a convolution, or `None` when it would be empty.
pub fn conv_output_size(
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    Some((
        out_extent(h, kh, stride, pad)?,
        out_extent(w, kw, stride, pad)?,
    ))
}

pub fn pool_output_size((h, w): (usize, usize), window: usize, stride: usize) -> Option<(usize, usize)> {
    if window == 0 || h < window || w < window {
        return None;
    }
    Some((out_extent(h, window, stride, 0)?, out_extent(w, window, stride, 0)?))
}

fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match kernel.shape()[..] {
        [o, c, kh, kw] => Ok((o, c, kh, kw)),
        _ => Err(FadsError::Dimension {
            op: "conv2d kernel must be [O,C,kH,kW]",
            left: kernel.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// Zero-padded cross-correlation.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let (c_out, kc, kh, kw) = kernel_dims(kernel)?;
    if kc != c_in || bias.len() != c_out {
        return Err(FadsError::Dimension {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let (oh, ow) = conv_output_size((h, w), (kh, kw), stride, padding).ok_or_else(|| {
        FadsError::Dimension {
            op: "conv2d output would be empty",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        }
    })?;

    let x = input.data();
    let k = kernel.data();
    let mut acc = vec![0f64; c_out * oh * ow];
    for o in 0..c_out {
        let out = &mut acc[o * oh * ow..(o + 1) * oh * ow];
        out.fill(bias[o] as f64);
        for c in 0..c_in {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let kv = k[((o * c_in + c) * kh + u) * kw + v] as f64;
                    if kv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let iy = (y * stride + u) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut out[y * ow..(y + 1) * ow];
                        for (xo, slot) in orow.iter_mut().enumerate() {
                            let ix = (xo * stride + v) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *slot += kv * row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], acc.into_iter().map(|v| v as f32).collect())
}

/// Gradient of [`conv2d`] with respect to its input: the transposed
/// convolution of `grad_out` with `kernel`.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    kernel: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_out, c_in, kh, kw) = kernel_dims(kernel)?;
    let (go_c, oh, ow) = grad_out.chw()?;
    let [ic, h, w] = input_shape[..] else {
        return Err(FadsError::Dimension {
            op: "conv2d backward input shape",
            left: input_shape.to_vec(),
            right: vec![],
        });
    };
    if go_c != c_out || ic != c_in || conv_output_size((h, w), (kh, kw), stride, padding) != Some((oh, ow)) {
        return Err(FadsError::Dimension {
            op: "conv2d backward",
            left: grad_out.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let g = grad_out.data();
    let k = kernel.data();
    let mut acc = vec![0f64; c_in * h * w];
    for o in 0..c_out {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        if gplane.iter().all(|&v| v == 0.0) {
            continue;
        }
        for c in 0..c_in {
            let plane = &mut acc[c * h * w..(c + 1) * h * w];
            for u in 0..kh {
                for v in 0..kw {
                    let kv = k[((o * c_in + c) * kh + u) * kw + v] as f64;
                    if kv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let iy = (y * stride + u) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for xo in 0..ow {
                            let ix = (xo * stride + v) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += kv * gplane[y * ow + xo] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), acc.into_iter().map(|v| v as f32).collect())
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient through a ReLU whose forward input was `input`.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor, mode: GradMode) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(FadsError::Dimension {
            op: "relu backward",
            left: input.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| relu_grad(x, g, mode))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[inline]
pub fn relu_grad(forward_input: f32, upstream: f32, mode: GradMode) -> f32 {
    let pass = match mode {
        GradMode::Vanilla => forward_input > 0.0,
        GradMode::Guided => forward_input > 0.0 && upstream > 0.0,
    };
    if pass {
        upstream
    } else {
        0.0
    }
}

/// Subgradient of `|u|`, zero at the origin.
#[inline]
pub fn abs_grad(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input index of the first maximal element in row-major window order.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = pool_output_size((h, w), window, stride).ok_or_else(|| FadsError::Dimension {
        op: "maxpool window larger than input",
        left: input.shape().to_vec(),
        right: vec![window, window],
    })?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best_idx = base + y * stride * w + xo * stride;
                let mut best = x[best_idx];
                for u in 0..window {
                    for v in 0..window {
                        let idx = base + (y * stride + u) * w + xo * stride + v;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

/// Routes each output gradient to its cached argmax.
pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.numel() != argmax.len() {
        return Err(FadsError::Dimension {
            op: "maxpool backward",
            left: grad_out.shape().to_vec(),
            right: vec![argmax.len()],
        });
    }
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        gd[idx] += g;
    }
    Ok(grad)
}

/// Per-channel parameters of an inference-mode batch normalisation.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub mean: &'a [f32],
    pub var: &'a [f32],
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub eps: f32,
}

impl BatchNormParams<'_> {
    fn check(&self, channels: usize, shape: &[usize]) -> Result<()> {
        for p in [self.mean, self.var, self.gamma, self.beta] {
            if p.len() != channels {
                return Err(FadsError::Dimension {
                    op: "batchnorm parameters",
                    left: shape.to_vec(),
                    right: vec![p.len()],
                });
            }
        }
        if self.var.iter().any(|&v| v < 0.0) {
            return Err(FadsError::InvalidArgument("batchnorm variance must be non-negative".into()));
        }
        Ok(())
    }

    fn scale(&self, c: usize) -> f64 {
        self.gamma[c] as f64 / (self.var[c] as f64 + self.eps as f64).sqrt()
    }
}

pub fn batchnorm_inference(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    params.check(c, input.shape())?;
    let plane = h * w;
    let mut out = Vec::with_capacity(input.numel());
    for ch in 0..c {
        let mean = params.mean[ch] as f64;
        let scale = params.scale(ch);
        let beta = params.beta[ch] as f64;
        for &v in &input.data()[ch * plane..(ch + 1) * plane] {
            out.push(((v as f64 - mean) * scale + beta) as f32);
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Batch norm backward with the running statistics held constant.
pub fn batchnorm_backward(grad_out: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let (c, h, w) = grad_out.chw()?;
    params.check(c, grad_out.shape())?;
    let plane = h * w;
    let mut out = Vec::with_capacity(grad_out.numel());
    for ch in 0..c {
        let scale = params.scale(ch);
        for &g in &grad_out.data()[ch * plane..(ch + 1) * plane] {
            out.push((g as f64 * scale) as f32);
        }
    }
    Tensor::new(grad_out.shape().to_vec(), out)
}

/// `[C,H,W] -> [C]` spatial mean.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let plane = h * w;
    let out = (0..c)
        .map(|ch| {
            let s: f64 = input.data()[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).sum();
            (s / plane as f64) as f32
        })
        .collect();
    Tensor::new(vec![c], out)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let [c, h, w] = input_shape[..] else {
        return Err(FadsError::Dimension {
            op: "gap backward",
            left: input_shape.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    };
    if grad_out.numel() != c {
        return Err(FadsError::Dimension {
            op: "gap backward",
            left: input_shape.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(c * plane);
    for &g in grad_out.data() {
        let share = (g as f64 / plane as f64) as f32;
        data.extend(std::iter::repeat(share).take(plane));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// Fully connected layer on a rank-1 input, `weight` is `[out, in]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let [out_n, in_n] = weight.shape()[..] else {
        return Err(FadsError::Dimension {
            op: "dense weight must be [out,in]",
            left: weight.shape().to_vec(),
            right: vec![],
        });
    };
    if input.rank() != 1 || input.numel() != in_n || bias.len() != out_n {
        return Err(FadsError::Dimension {
            op: "dense",
            left: input.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let x = input.data();
    let out = weight
        .data()
        .chunks_exact(in_n)
        .zip(bias)
        .map(|(row, &b)| {
            let s: f64 = row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
            (s + b as f64) as f32
        })
        .collect();
    Tensor::new(vec![out_n], out)
}

pub fn dense_backward(grad_out: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let [out_n, in_n] = weight.shape()[..] else {
        return Err(FadsError::Dimension {
            op: "dense weight must be [out,in]",
            left: weight.shape().to_vec(),
            right: vec![],
        });
    };
    if grad_out.numel() != out_n {
        return Err(FadsError::Dimension {
            op: "dense backward",
            left: grad_out.shape().to_vec(),
            right: weight.shape().to_vec(),
        });
    }
    let mut acc = vec![0f64; in_n];
    for (row, &g) in weight.data().chunks_exact(in_n).zip(grad_out.data()) {
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += w as f64 * g as f64;
        }
    }
    Tensor::new(vec![in_n], acc.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y, Tensor::filled(&[1, 3, 3], 1.0));
    }

    #[test]
    fn zero_kernel_annihilates() {
        let x = Tensor::new(vec![2, 5, 4], (0..40).map(|v| v as f32 - 7.0).collect()).unwrap();
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &k, &[0.0; 3], 2, 1).unwrap();
        assert_eq!(y.shape(), &[3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, &[0.0], 1, 0).unwrap_err().to_string();
        assert!(err.contains("[2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::filled(&[2, 2], -0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::new(vec![4], vec![0.1, 2.0, 3.5, 1e-3]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn guided_relu_rule() {
        assert_eq!(relu_grad(2.0, -3.0, GradMode::Guided), 0.0);
        assert_eq!(relu_grad(2.0, 3.0, GradMode::Guided), 3.0);
        assert_eq!(relu_grad(-1.0, 3.0, GradMode::Guided), 0.0);
        assert_eq!(relu_grad(-1.0, -3.0, GradMode::Guided), 0.0);
        assert_eq!(relu_grad(2.0, -3.0, GradMode::Vanilla), -3.0);
        assert_eq!(relu_grad(-1.0, 3.0, GradMode::Vanilla), 0.0);
    }

    #[test]
    fn abs_subgradient() {
        assert_eq!(abs_grad(0.0), 0.0);
        assert_eq!(abs_grad(-2.0), -1.0);
        assert_eq!(abs_grad(1e-30), 1.0);
    }

    #[test]
    fn maxpool_single_window() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        // (1,1) in a 2x2 plane
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn maxpool_constant_ties_pick_first() {
        let x = Tensor::filled(&[1, 4, 4], 0.7);
        let (y, arg) = maxpool(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        assert_eq!(arg, vec![0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_window_too_large() {
        assert!(maxpool(&Tensor::zeros(&[1, 1, 3]), 2, 2).is_err());
    }

    #[test]
    fn batchnorm_identity_and_gamma_zero() {
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let ones = [1.0, 1.0];
        let zeros = [0.0, 0.0];
        let id = BatchNormParams { mean: &zeros, var: &ones, gamma: &ones, beta: &zeros, eps: 0.0 };
        assert_eq!(batchnorm_inference(&x, &id).unwrap(), x);
        let beta = [0.5, -1.5];
        let flat = BatchNormParams { mean: &ones, var: &ones, gamma: &zeros, beta: &beta, eps: 1e-5 };
        assert_eq!(batchnorm_inference(&x, &flat).unwrap().data(), &[0.5, 0.5, -1.5, -1.5]);
    }

    #[test]
    fn batchnorm_rejects_negative_variance() {
        let x = Tensor::zeros(&[1, 1, 1]);
        let p = BatchNormParams { mean: &[0.0], var: &[-1.0], gamma: &[1.0], beta: &[0.0], eps: 0.0 };
        assert!(batchnorm_inference(&x, &p).is_err());
    }

    #[test]
    fn dense_and_gap() {
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, -2.0, 4.0]).unwrap();
        let g = global_avg_pool(&x).unwrap();
        assert_eq!(g.data(), &[2.0, 1.0]);
        let w = Tensor::new(vec![1, 2], vec![2.0, -1.0]).unwrap();
        let y = dense(&g, &w, &[0.5]).unwrap();
        assert_eq!(y.data(), &[3.5]);
        let gx = dense_backward(&Tensor::new(vec![1], vec![1.0]).unwrap(), &w).unwrap();
        assert_eq!(gx.data(), &[2.0, -1.0]);
        let gi = global_avg_pool_backward(&gx, &[2, 1, 2]).unwrap();
        assert_eq!(gi.data(), &[1.0, 1.0, -0.5, -0.5]);
    }
}
