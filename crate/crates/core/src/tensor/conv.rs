use serde::{Deserialize, Serialize};

use super::par::for_each_chunk;
use super::{Element, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

/// Geometry of a 2-D convolution. Borders are always zero-filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    /// Zero padding applied to every side.
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1 with `(k - 1) / 2` padding, which keeps the spatial size for odd `k`.
    pub fn same(in_channels: usize, out_channels: usize, k: usize, groups: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            dilation: 1,
            groups,
            padding: k.saturating_sub(1) / 2,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1, 1)
    }

    pub fn depthwise(channels: usize, k: usize) -> Self {
        Self::same(channels, channels, k, channels)
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            groups,
            ..
        } = *self;
        if in_channels == 0 || out_channels == 0 || groups == 0 {
            return Err(Error::Config(format!("conv with zero extent: {self:?}")));
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::Config(format!(
                "channels {in_channels}->{out_channels} not divisible by groups {groups}"
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(
            self.out_channels,
            self.in_per_group(),
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().numel()
    }

    fn out_extent(&self, input: usize, k: usize) -> Result<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(Error::Shape {
                op: "conv2d",
                dim: "padded spatial extent",
                expected: span,
                actual: padded,
            });
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.out_extent(h, self.kernel.0)?,
            self.out_extent(w, self.kernel.1)?,
        ))
    }
}

/// Range of output indices whose input index `o * stride + offset` lies in `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let hi_incl = (len as isize - 1 - offset).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, out_len as isize);
    let lo = lo.clamp(0, hi);
    (lo as usize, hi as usize)
}

fn check_inputs<T: Element>(x: &Tensor4<T>, w: &Tensor4<T>, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    ensure_dim("conv2d", "input channels", spec.in_channels, x.shape().c)?;
    let ws = spec.weight_shape();
    let got = w.shape();
    ensure_dim("conv2d", "weight out channels", ws.n, got.n)?;
    ensure_dim("conv2d", "weight in channels per group", ws.c, got.c)?;
    ensure_dim("conv2d", "kernel height", ws.h, got.h)?;
    ensure_dim("conv2d", "kernel width", ws.w, got.w)
}

/// Grouped, strided, dilated 2-D convolution with zero padding.
pub fn conv2d<T: Element>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    check_inputs(x, w, spec)?;
    if let Some(b) = bias {
        ensure_dim("conv2d", "bias length", spec.out_channels, b.len())?;
    }
    let xs = x.shape();
    let (oh, ow) = spec.output_hw(xs.h, xs.w)?;
    let out_shape = Shape4::new(xs.n, spec.out_channels, oh, ow);
    let mut out = Tensor4::zeros(out_shape);

    let (kh, kw) = spec.kernel;
    let icpg = spec.in_per_group();
    let ocpg = spec.out_per_group();
    let (s, d, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let wdata = w.data();

    for_each_chunk(out.data_mut(), oh * ow, |idx, plane| {
        let n = idx / spec.out_channels;
        let oc = idx % spec.out_channels;
        let ic0 = (oc / ocpg) * icpg;
        if let Some(b) = bias {
            plane.fill(b[oc]);
        }
        for icl in 0..icpg {
            let xin = x.plane(n, ic0 + icl);
            for ky in 0..kh {
                let dy = (ky * d) as isize - p;
                let (oy0, oy1) = valid_range(dy, s, xs.h, oh);
                for kx in 0..kw {
                    let wv = wdata[((oc * icpg + icl) * kh + ky) * kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let dx = (kx * d) as isize - p;
                    let (ox0, ox1) = valid_range(dx, s, xs.w, ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = (oy * s) as isize + dy;
                        let row_in = &xin[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                        let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = (ox0 as isize + dx) as usize;
                            let src = &row_in[ix0..ix0 + (ox1 - ox0)];
                            for (o, &v) in row_out[ox0..ox1].iter_mut().zip(src) {
                                *o = *o + wv * v;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ((ox * s) as isize + dx) as usize;
                                row_out[ox] = row_out[ox] + wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Option<Tensor4<T>>,
    pub bias: Option<Vec<T>>,
}

/// Vector-Jacobian products of [`conv2d`] for the requested operands.
pub fn conv2d_backward<T: Element>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    spec: &ConvSpec,
    want: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    check_inputs(x, w, spec)?;
    let xs = x.shape();
    let (oh, ow) = spec.output_hw(xs.h, xs.w)?;
    let gs = grad_out.shape();
    ensure_dim("conv2d_backward", "grad batch", xs.n, gs.n)?;
    ensure_dim("conv2d_backward", "grad channels", spec.out_channels, gs.c)?;
    ensure_dim("conv2d_backward", "grad height", oh, gs.h)?;
    ensure_dim("conv2d_backward", "grad width", ow, gs.w)?;

    let (kh, kw) = spec.kernel;
    let icpg = spec.in_per_group();
    let ocpg = spec.out_per_group();
    let (s, d, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let wdata = w.data();

    let input = want.0.then(|| {
        let mut gx = Tensor4::zeros(xs);
        for_each_chunk(gx.data_mut(), xs.plane(), |idx, plane| {
            let n = idx / xs.c;
            let ic = idx % xs.c;
            let g = ic / icpg;
            let icl = ic % icpg;
            for oc in g * ocpg..(g + 1) * ocpg {
                let gop = grad_out.plane(n, oc);
                for ky in 0..kh {
                    let dy = (ky * d) as isize - p;
                    let (oy0, oy1) = valid_range(dy, s, xs.h, oh);
                    for kx in 0..kw {
                        let wv = wdata[((oc * icpg + icl) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dx = (kx * d) as isize - p;
                        let (ox0, ox1) = valid_range(dx, s, xs.w, ow);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = ((oy * s) as isize + dy) as usize;
                            let grow = &gop[oy * ow..(oy + 1) * ow];
                            let xrow = &mut plane[iy * xs.w..(iy + 1) * xs.w];
                            if s == 1 {
                                let ix0 = (ox0 as isize + dx) as usize;
                                let dst = &mut xrow[ix0..ix0 + (ox1 - ox0)];
                                for (o, &g) in dst.iter_mut().zip(&grow[ox0..ox1]) {
                                    *o = *o + wv * g;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ((ox * s) as isize + dx) as usize;
                                    xrow[ix] = xrow[ix] + wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        gx
    });

    let weight = want.1.then(|| {
        let mut gw = Tensor4::zeros(spec.weight_shape());
        for_each_chunk(gw.data_mut(), icpg * kh * kw, |oc, chunk| {
            let ic0 = (oc / ocpg) * icpg;
            for n in 0..xs.n {
                let gop = grad_out.plane(n, oc);
                for icl in 0..icpg {
                    let xin = x.plane(n, ic0 + icl);
                    for ky in 0..kh {
                        let dy = (ky * d) as isize - p;
                        let (oy0, oy1) = valid_range(dy, s, xs.h, oh);
                        for kx in 0..kw {
                            let dx = (kx * d) as isize - p;
                            let (ox0, ox1) = valid_range(dx, s, xs.w, ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oy in oy0..oy1 {
                                let iy = ((oy * s) as isize + dy) as usize;
                                let grow = &gop[oy * ow..(oy + 1) * ow];
                                let xrow = &xin[iy * xs.w..(iy + 1) * xs.w];
                                if s == 1 {
                                    let ix0 = (ox0 as isize + dx) as usize;
                                    acc = acc
                                        + grow[ox0..ox1]
                                            .iter()
                                            .zip(&xrow[ix0..ix0 + (ox1 - ox0)])
                                            .fold(T::zero(), |a, (&g, &v)| a + g * v);
                                } else {
                                    for ox in ox0..ox1 {
                                        let ix = ((ox * s) as isize + dx) as usize;
                                        acc = acc + grow[ox] * xrow[ix];
                                    }
                                }
                            }
                            let k = (icl * kh + ky) * kw + kx;
                            chunk[k] = chunk[k] + acc;
                        }
                    }
                }
            }
        });
        gw
    });

    let bias = want.2.then(|| {
        (0..spec.out_channels)
            .map(|oc| {
                (0..xs.n)
                    .map(|n| grad_out.plane(n, oc).iter().copied().sum::<T>())
                    .sum()
            })
            .collect()
    });

    Ok(ConvGrads {
        input,
        weight,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_padding() {
        // k=3, p=1: dx = -1 means ox 0 reads ix -1 (invalid)
        assert_eq!(valid_range(-1, 1, 5, 5), (1, 5));
        assert_eq!(valid_range(1, 1, 5, 5), (0, 4));
        assert_eq!(valid_range(0, 2, 5, 3), (0, 3));
        assert_eq!(valid_range(-3, 2, 5, 3), (2, 3));
        assert_eq!(valid_range(9, 1, 5, 5), (0, 0));
    }

    #[test]
    fn non_divisible_groups_is_config_error() {
        let spec = ConvSpec::same(6, 4, 3, 4);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn shape_error_names_dimension() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 3, 4, 4));
        let w = Tensor4::<f32>::zeros(Shape4::new(2, 3, 3, 3));
        let err = conv2d(&x, &w, None, &ConvSpec::same(2, 2, 3, 1)).unwrap_err();
        match err {
            Error::Shape { dim, .. } => assert_eq!(dim, "input channels"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn output_size_formula() {
        let spec = ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: (3, 3),
            stride: 2,
            dilation: 2,
            groups: 1,
            padding: 1,
        };
        // floor((9 + 2 - 2*2 - 1) / 2) + 1 = 4
        assert_eq!(spec.output_hw(9, 9).unwrap(), (4, 4));
    }
}
