//! Forward and backward kernels for the non-convolution operations.

use super::par::for_each_chunk;
use super::{Element, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Max pooling with `ceil` output sizing: trailing windows may be partial.
/// Returns the pooled tensor and, per output cell, the flat input index of the max.
pub fn max_pool<T: Element>(
    x: &Tensor4<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor4<T>, Vec<usize>)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("max_pool kernel and stride must be positive".into()));
    }
    let s = x.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::Shape {
            op: "max_pool",
            dim: "spatial extent",
            expected: 1,
            actual: 0,
        });
    }
    let oh = s.h.div_ceil(stride);
    let ow = s.w.div_ceil(stride);
    let out_shape = s.with_hw(oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            let plane = x.plane(n, c);
            for oy in 0..oh {
                let y0 = oy * stride;
                let y1 = (y0 + kernel).min(s.h);
                for ox in 0..ow {
                    let x0 = ox * stride;
                    let x1 = (x0 + kernel).min(s.w);
                    let mut best = y0 * s.w + x0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let i = y * s.w + xx;
                            if plane[i] > plane[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(plane[best]);
                    argmax.push(base + best);
                }
            }
        }
    }
    Ok((Tensor4::from_vec(out_shape, out)?, argmax))
}

pub fn max_pool_backward<T: Element>(
    in_shape: Shape4,
    argmax: &[usize],
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let mut gx = Tensor4::zeros(in_shape);
    let d = gx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    gx
}

/// Per-output-index source taps for half-pixel-centre linear interpolation.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn linear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize, align-corners = false.
pub fn bilinear<T: Element>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::Config(format!(
            "bilinear resize {}x{} -> {out_h}x{out_w} needs positive extents",
            s.h, s.w
        )));
    }
    let ty = linear_taps(s.h, out_h);
    let tx = linear_taps(s.w, out_w);
    let mut out = Tensor4::zeros(s.with_hw(out_h, out_w));
    for_each_chunk(out.data_mut(), out_h * out_w, |idx, plane| {
        let src = x.plane(idx / s.c, idx % s.c);
        for (oy, a) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(a.frac);
            let gy = T::one() - fy;
            for (ox, b) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(b.frac);
                let gx = T::one() - fx;
                let v00 = src[a.i0 * s.w + b.i0];
                let v01 = src[a.i0 * s.w + b.i1];
                let v10 = src[a.i1 * s.w + b.i0];
                let v11 = src[a.i1 * s.w + b.i1];
                plane[oy * out_w + ox] = gy * (gx * v00 + fx * v01) + fy * (gx * v10 + fx * v11);
            }
        }
    });
    Ok(out)
}

pub fn bilinear_backward<T: Element>(in_shape: Shape4, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let gs = grad_out.shape();
    let ty = linear_taps(in_shape.h, gs.h);
    let tx = linear_taps(in_shape.w, gs.w);
    let mut gx = Tensor4::zeros(in_shape);
    let w = in_shape.w;
    for_each_chunk(gx.data_mut(), in_shape.plane(), |idx, plane| {
        let g = grad_out.plane(idx / in_shape.c, idx % in_shape.c);
        for (oy, a) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(a.frac);
            let gy = T::one() - fy;
            for (ox, b) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(b.frac);
                let gxw = T::one() - fx;
                let v = g[oy * gs.w + ox];
                plane[a.i0 * w + b.i0] = plane[a.i0 * w + b.i0] + gy * gxw * v;
                plane[a.i0 * w + b.i1] = plane[a.i0 * w + b.i1] + gy * fx * v;
                plane[a.i1 * w + b.i0] = plane[a.i1 * w + b.i0] + fy * gxw * v;
                plane[a.i1 * w + b.i1] = plane[a.i1 * w + b.i1] + fy * fx * v;
            }
        }
    });
    gx
}

/// Sub-pixel rearrangement `(n, c·r², h, w) -> (n, c, h·r, w·r)`.
pub fn pixel_shuffle<T: Element>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::Config(format!(
            "pixel_shuffle: {} channels not divisible by r^2 = {}",
            s.c,
            r * r
        )));
    }
    let oc = s.c / (r * r);
    let out_shape = Shape4::new(s.n, oc, s.h * r, s.w * r);
    let mut out = Tensor4::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, c, y * r + i, xx * r + j, src[y * s.w + xx]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::Config(format!(
            "pixel_unshuffle: {}x{} not divisible by {r}",
            s.h, s.w
        )));
    }
    let (h, w) = (s.h / r, s.w / r);
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c * r * r, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    for y in 0..h {
                        for xx in 0..w {
                            let v = x.at(n, c, y * r + i, xx * r + j);
                            out.set(n, c * r * r + i * r + j, y, xx, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel statistics over `(n, h, w)`.
pub fn channel_moments<T: Element>(x: &Tensor4<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let count = T::from_usize(s.n * s.plane()).unwrap_or_else(T::one);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let m = (0..s.n)
            .map(|n| x.plane(n, c).iter().copied().sum::<T>())
            .sum::<T>()
            / count;
        let v = (0..s.n)
            .map(|n| x.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<T>())
            .sum::<T>()
            / count;
        mean[c] = m;
        var[c] = v;
    }
    (mean, var)
}

/// `gamma * (x - mean) * invstd + beta`, per channel.
pub fn affine_normalize<T: Element>(
    x: &Tensor4<T>,
    mean: &[T],
    invstd: &[T],
    gamma: &[T],
    beta: &[T],
) -> Result<Tensor4<T>> {
    let s = x.shape();
    for (name, len) in [
        ("mean length", mean.len()),
        ("invstd length", invstd.len()),
        ("gamma length", gamma.len()),
        ("beta length", beta.len()),
    ] {
        ensure_dim("batch_norm", name, s.c, len)?;
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] * invstd[c];
            let shift = beta[c] - mean[c] * scale;
            for v in out.plane_mut(n, c) {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

pub struct BatchNormGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward of batch normalization. With `batch_stats` the statistics are
/// functions of `x` (training mode); otherwise they are constants.
pub fn batch_norm_backward<T: Element>(
    x: &Tensor4<T>,
    mean: &[T],
    invstd: &[T],
    gamma: &[T],
    grad_out: &Tensor4<T>,
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let s = x.shape();
    let count = T::from_usize(s.n * s.plane()).unwrap_or_else(T::one);
    let mut gx = Tensor4::zeros(s);
    let mut ggamma = vec![T::zero(); s.c];
    let mut gbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let (m, is) = (mean[c], invstd[c]);
        let mut sum_g = T::zero();
        let mut sum_gxhat = T::zero();
        for n in 0..s.n {
            for (&g, &v) in grad_out.plane(n, c).iter().zip(x.plane(n, c)) {
                sum_g = sum_g + g;
                sum_gxhat = sum_gxhat + g * (v - m) * is;
            }
        }
        ggamma[c] = sum_gxhat;
        gbeta[c] = sum_g;
        let k = gamma[c] * is;
        for n in 0..s.n {
            let src = x.plane(n, c);
            let g = grad_out.plane(n, c);
            let dst = gx.plane_mut(n, c);
            for i in 0..dst.len() {
                dst[i] = if batch_stats {
                    let xhat = (src[i] - m) * is;
                    k * (g[i] - sum_g / count - xhat * sum_gxhat / count)
                } else {
                    k * g[i]
                };
            }
        }
    }
    BatchNormGrads {
        input: gx,
        gamma: ggamma,
        beta: gbeta,
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian error linear unit, exact erf form.
pub fn gelu<T: Element>(v: T) -> T {
    let x = v.to_f64_lossy();
    T::from_f64_lossy(x * std_normal_cdf(x))
}

pub fn gelu_grad<T: Element>(v: T) -> T {
    let x = v.to_f64_lossy();
    T::from_f64_lossy(std_normal_cdf(x) + x * std_normal_pdf(x))
}
