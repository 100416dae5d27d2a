//! Luma-channel PSNR and SSIM with border cropping.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape4, Tensor4};

/// Studio-swing BT.601 luma of a unit-range RGB tensor, shape `(n, 1, h, w)`.
pub fn rgb_to_y<T: Element>(img: &Tensor4<T>) -> Result<Tensor4<f64>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::Shape {
            op: "rgb_to_y",
            dim: "channels",
            expected: 3,
            actual: s.c,
        });
    }
    let p = s.plane();
    let mut out = Vec::with_capacity(s.n * p);
    for n in 0..s.n {
        let (r, g, b) = (img.plane(n, 0), img.plane(n, 1), img.plane(n, 2));
        for i in 0..p {
            let y = 16.0
                + 65.481 * r[i].to_f64_lossy()
                + 128.553 * g[i].to_f64_lossy()
                + 24.966 * b[i].to_f64_lossy();
            out.push(y / 255.0);
        }
    }
    Tensor4::from_vec(Shape4::new(s.n, 1, s.h, s.w), out)
}

fn cropped_y<T: Element>(
    sr: &Tensor4<T>,
    gt: &Tensor4<T>,
    crop: usize,
    op: &'static str,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize, usize)> {
    sr.ensure_same_shape(gt, op)?;
    let s = sr.shape();
    if 2 * crop >= s.h || 2 * crop >= s.w {
        return Err(Error::Config(format!(
            "crop border {crop} leaves nothing of a {}x{} image",
            s.h, s.w
        )));
    }
    let (h, w) = (s.h - 2 * crop, s.w - 2 * crop);
    let planes = |t: &Tensor4<T>| -> Result<Vec<Vec<f64>>> {
        let y = rgb_to_y(t)?;
        Ok((0..s.n)
            .map(|n| {
                let p = y.plane(n, 0);
                (crop..crop + h)
                    .flat_map(|r| p[r * s.w + crop..r * s.w + crop + w].iter().copied())
                    .collect()
            })
            .collect())
    };
    Ok((planes(sr)?, planes(gt)?, h, w))
}

fn psnr_plane(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR in dB on the luma channel with peak 1.0, averaged over the batch.
/// Identical inputs give `+inf`.
pub fn psnr_y<T: Element>(sr: &Tensor4<T>, gt: &Tensor4<T>, crop_border: usize) -> Result<f64> {
    let (a, b, _, _) = cropped_y(sr, gt, crop_border, "psnr_y")?;
    Ok(a.iter().zip(&b).map(|(x, y)| psnr_plane(x, y)).sum::<f64>() / a.len() as f64)
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps() -> [f64; SSIM_WIN] {
    let mut taps = [0.0; SSIM_WIN];
    let mid = (SSIM_WIN / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable 'valid' Gaussian filtering.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WIN, w + 1 - SSIM_WIN);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WIN).map(|k| taps[k] * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WIN).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(a, a), h, w, &taps);
    let bb = filter_valid(&prod(b, b), h, w, &taps);
    let ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / n as f64
}

/// Mean local SSIM on the luma channel (11×11 Gaussian window, σ = 1.5),
/// averaged over the batch.
pub fn ssim_y<T: Element>(sr: &Tensor4<T>, gt: &Tensor4<T>, crop_border: usize) -> Result<f64> {
    let (a, b, h, w) = cropped_y(sr, gt, crop_border, "ssim_y")?;
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(Error::Config(format!(
            "ssim needs at least {SSIM_WIN}x{SSIM_WIN} pixels after cropping, got {h}x{w}"
        )));
    }
    Ok(a.iter().zip(&b).map(|(x, y)| ssim_plane(x, y, h, w)).sum::<f64>() / a.len() as f64)
}
