//! Antialiased bicubic resampling (cubic convolution, a = -0.5) with
//! symmetric border handling.

use super::image::{to_u8, ImageBuffer};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4};

pub fn cubic(x: f64) -> f64 {
    let a = x.abs();
    let a2 = a * a;
    let a3 = a2 * a;
    if a <= 1.0 {
        1.5 * a3 - 2.5 * a2 + 1.0
    } else if a <= 2.0 {
        -0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0
    } else {
        0.0
    }
}

/// Symmetric (edge-repeating) reflection of an index into `[0, n)`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Taps for one output sample: source indices and normalized weights.
#[derive(Clone, Debug)]
struct Taps {
    idx: Vec<usize>,
    weight: Vec<f64>,
}

fn contributions(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let shrink = scale < 1.0;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let left = (center - width / 2.0).floor() as isize;
            let count = width.ceil() as isize + 2;
            let mut idx = Vec::with_capacity(count as usize);
            let mut weight = Vec::with_capacity(count as usize);
            for j in left..left + count {
                let d = center - j as f64;
                let w = if shrink { scale * cubic(scale * d) } else { cubic(d) };
                if w != 0.0 {
                    idx.push(reflect(j, in_len));
                    weight.push(w);
                }
            }
            let sum: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= sum);
            Taps { idx, weight }
        })
        .collect()
}

/// Resamples one `h×w` plane to `oh×ow`, width first.
pub fn resize_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let cx = contributions(w, ow);
    let cy = contributions(h, oh);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for (x, t) in cx.iter().enumerate() {
            rows[y * ow + x] = t.idx.iter().zip(&t.weight).map(|(&i, &wt)| wt * line[i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, t) in cy.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = t
                .idx
                .iter()
                .zip(&t.weight)
                .map(|(&i, &wt)| wt * rows[i * ow + x])
                .sum();
        }
    }
    out
}

/// Bicubic resize of every plane of a tensor; values are not clamped.
pub fn bicubic_resize<T: Element>(t: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("resize target {out_w}x{out_h} is empty")));
    }
    let s = t.shape();
    let mut data = Vec::with_capacity(s.n * s.c * out_h * out_w);
    for n in 0..s.n {
        for c in 0..s.c {
            let plane: Vec<f64> = t.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
            data.extend(
                resize_plane(&plane, s.h, s.w, out_h, out_w)
                    .into_iter()
                    .map(T::from_f64_lossy),
            );
        }
    }
    Tensor4::from_vec(s.with_hw(out_h, out_w), data)
}

/// Bicubic resize of an 8-bit image with rounding and clamping.
pub fn resize_image(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    let t = bicubic_resize(&img.to_tensor::<f64>(), out_h, out_w)?;
    let s = t.shape();
    let p = s.plane();
    let mut pixels = vec![0u8; 3 * p];
    for c in 0..3 {
        for (i, &v) in t.plane(0, c).iter().enumerate() {
            pixels[i * 3 + c] = to_u8(v);
        }
    }
    ImageBuffer::new(out_w, out_h, pixels)
}
