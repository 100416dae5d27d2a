//! Unnormalized forward 2-D discrete Fourier transform, applied row-wise then
//! column-wise, accumulated in f64.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::par::for_each_chunk;
use super::{Element, Tensor4};

/// Forward 2-D DFT of every `(n, c)` plane. Returns `(re, im)`.
pub fn dft2<T: Element>(x: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    dft2_complex(x, None)
}

/// Forward 2-D DFT of a complex input given as separate real/imaginary parts.
pub fn dft2_complex<T: Element>(re: &Tensor4<T>, im: Option<&Tensor4<T>>) -> (Tensor4<T>, Tensor4<T>) {
    let s = re.shape();
    let p = s.plane();
    let mut out_re = re.clone();
    let mut out_im = match im {
        Some(t) => t.clone(),
        None => Tensor4::zeros(s),
    };
    if p == 0 {
        return (out_re, out_im);
    }
    let mut planner = FftPlanner::<f64>::new();
    let rows: Arc<dyn Fft<f64>> = planner.plan_fft_forward(s.w);
    let cols: Arc<dyn Fft<f64>> = planner.plan_fft_forward(s.h);

    let mut planes: Vec<Vec<Complex64>> = out_re
        .data()
        .chunks(p)
        .zip(out_im.data().chunks(p))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&r, &i)| Complex64::new(r.to_f64_lossy(), i.to_f64_lossy()))
                .collect()
        })
        .collect();
    for_each_chunk(&mut planes, 1, |_, slot| {
        let plane = &mut slot[0];
        // rows are contiguous
        rows.process(plane);
        let mut col = vec![Complex64::default(); s.h];
        for x in 0..s.w {
            for y in 0..s.h {
                col[y] = plane[y * s.w + x];
            }
            cols.process(&mut col);
            for y in 0..s.h {
                plane[y * s.w + x] = col[y];
            }
        }
    });
    for (i, plane) in planes.into_iter().enumerate() {
        let dst_re = &mut out_re.data_mut()[i * p..(i + 1) * p];
        for (d, v) in dst_re.iter_mut().zip(&plane) {
            *d = T::from_f64_lossy(v.re);
        }
        let dst_im = &mut out_im.data_mut()[i * p..(i + 1) * p];
        for (d, v) in dst_im.iter_mut().zip(&plane) {
            *d = T::from_f64_lossy(v.im);
        }
    }
    (out_re, out_im)
}

/// Adjoint of `x -> (Re F x, Im F x)` for real `x`: `Re F g_re + Im F g_im`.
pub fn dft2_real_adjoint<T: Element>(g_re: &Tensor4<T>, g_im: &Tensor4<T>) -> Tensor4<T> {
    let (a_re, _) = dft2(g_re);
    let (_, b_im) = dft2(g_im);
    let mut out = a_re;
    for (o, &b) in out.data_mut().iter_mut().zip(b_im.data()) {
        *o = *o + b;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn constant_plane_has_dc_only() {
        let x = Tensor4::<f64>::full(Shape4::new(1, 1, 3, 6), 2.0);
        let (re, im) = dft2(&x);
        assert!((re.data()[0] - 36.0).abs() < 1e-9);
        for i in 1..18 {
            assert!(re.data()[i].abs() < 1e-9 && im.data()[i].abs() < 1e-9);
        }
    }
}
