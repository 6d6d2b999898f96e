//! Forward and backward kernels on raw `f64` buffers.
//!
//! Every kernel accumulates each output element in a fixed order starting
//! from zero, so results are bitwise reproducible and match straightforward
//! nested-loop references exactly.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, t.shape(), &[0, 0])),
    }
}

/// `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul")?;
    let (k2, n) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[M×K] · b[N×K]ᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul_nt")?;
    let (n, k2) = matrix_dims(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[K×M]ᵀ · b[K×N]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = matrix_dims(a, "matmul_tn")?;
    let (k2, n) = matrix_dims(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Spatial padding mode for [`conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding of `(k - 1) / 2` on every side; with stride 1 and an odd
    /// kernel the output keeps the input's spatial size.
    Same,
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Accepts `C×H×W` (treated as a batch of one) or `N×C×H×W` inputs and
    /// `O×C×kH×kW` kernels.
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        let (batch, in_channels, height, width) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape("conv2d", input, kernel)),
        };
        let [out_channels, kc, kernel_h, kernel_w] = *kernel else {
            return Err(Error::shape("conv2d", input, kernel));
        };
        if kc != in_channels || stride == 0 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((kernel_h - 1) / 2, (kernel_w - 1) / 2),
        };
        if kernel_h > height + 2 * pad_h || kernel_w > width + 2 * pad_w {
            return Err(Error::shape("conv2d", input, kernel));
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            pad_h,
            pad_w,
            out_h: (height + 2 * pad_h - kernel_h) / stride + 1,
            out_w: (width + 2 * pad_w - kernel_w) / stride + 1,
        })
    }

    /// Output rows `y` for which input row `y*stride + ki - pad` is inside the image.
    fn valid_range(out: usize, inp: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
        // smallest y with y*stride + k >= pad
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        // largest y with y*stride + k - pad <= inp - 1
        let hi = if inp + pad <= k {
            0
        } else {
            ((inp - 1 + pad - k) / stride + 1).min(out)
        };
        (lo.min(hi), hi)
    }

    fn output_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.out_channels, self.out_h, self.out_w]
        } else {
            vec![self.out_channels, self.out_h, self.out_w]
        }
    }
}

/// 2-D cross-correlation (the kernel is not flipped).
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let (x, k) = (input.data(), kernel.data());
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0; g.batch * g.out_channels * plane];
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let dst = &mut out[(n * g.out_channels + o) * plane..][..plane];
            for c in 0..g.in_channels {
                let src = &x[(n * g.in_channels + c) * g.height * g.width..][..g.height * g.width];
                for ki in 0..g.kernel_h {
                    let (ylo, yhi) = ConvGeometry::valid_range(g.out_h, g.height, ki, g.pad_h, g.stride);
                    for kj in 0..g.kernel_w {
                        let w = k[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                        let (xlo, xhi) = ConvGeometry::valid_range(g.out_w, g.width, kj, g.pad_w, g.stride);
                        for y in ylo..yhi {
                            let iy = y * g.stride + ki - g.pad_h;
                            let srow = &src[iy * g.width..][..g.width];
                            let drow = &mut dst[y * g.out_w..][..g.out_w];
                            if g.stride == 1 {
                                let off = kj as isize - g.pad_w as isize;
                                let s = &srow[(xlo as isize + off) as usize..(xhi as isize + off) as usize];
                                for (d, &v) in drow[xlo..xhi].iter_mut().zip(s) {
                                    *d += v * w;
                                }
                            } else {
                                for xo in xlo..xhi {
                                    drow[xo] += srow[xo * g.stride + kj - g.pad_w] * w;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(g.output_shape(input.rank() == 4), out)
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
///
/// The input gradient is skipped (returned as `None`) when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: Padding,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, padding)?;
    let expected = g.output_shape(input.rank() == 4);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &expected));
    }
    let (x, k, go) = (input.data(), kernel.data(), grad_out.data());
    let plane = g.out_h * g.out_w;
    let in_plane = g.height * g.width;
    let mut gk = vec![0.0; kernel.len()];
    let mut gx = if need_input { vec![0.0; input.len()] } else { Vec::new() };
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            let gplane = &go[(n * g.out_channels + o) * plane..][..plane];
            for c in 0..g.in_channels {
                let base = (n * g.in_channels + c) * in_plane;
                for ki in 0..g.kernel_h {
                    let (ylo, yhi) = ConvGeometry::valid_range(g.out_h, g.height, ki, g.pad_h, g.stride);
                    for kj in 0..g.kernel_w {
                        let kidx = ((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj;
                        let w = k[kidx];
                        let (xlo, xhi) = ConvGeometry::valid_range(g.out_w, g.width, kj, g.pad_w, g.stride);
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let iy = y * g.stride + ki - g.pad_h;
                            let grow = &gplane[y * g.out_w..][..g.out_w];
                            for xo in xlo..xhi {
                                let ix = base + iy * g.width + xo * g.stride + kj - g.pad_w;
                                acc += grow[xo] * x[ix];
                            }
                            if need_input {
                                for xo in xlo..xhi {
                                    let ix = base + iy * g.width + xo * g.stride + kj - g.pad_w;
                                    gx[ix] += grow[xo] * w;
                                }
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    let gk = Tensor::new(kernel.shape().to_vec(), gk)?;
    let gx = if need_input {
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((gx, gk))
}

/// Max pooling over `pool×pool` windows with step `pool` on `C×H×W` or
/// `N×C×H×W` inputs. Odd trailing rows/columns form partial windows, which
/// is equivalent to padding with negative infinity.
///
/// Returns the pooled tensor and, for each output element, the flat input
/// index it was taken from (first maximum in row-major window order).
pub fn maxpool2d(input: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>)> {
    let (planes, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        [n, c, h, w] => (n * c, h, w),
        _ => return Err(Error::shape("maxpool2d", input.shape(), &[pool, pool])),
    };
    if pool == 0 {
        return Err(Error::shape("maxpool2d", input.shape(), &[pool, pool]));
    }
    let (oh, ow) = (h.div_ceil(pool), w.div_ceil(pool));
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for iy in oy * pool..((oy + 1) * pool).min(h) {
                    for ix in ox * pool..((ox + 1) * pool).min(w) {
                        let idx = base + iy * w + ix;
                        if best_idx == usize::MAX || x[idx] > best {
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
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Ok((Tensor::new(shape, out)?, arg))
}

/// Routes each pooled gradient back to the input element it came from.
pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool2d_backward", grad_out.shape(), &[argmax.len()]));
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gx)
}

/// Softmax along the last axis, with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let cols = *x.shape().last().expect("tensor has at least one axis");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}
