//! Test-only oracles shared by the integration suites: central finite
//! differences, direct convolution, direct DFT, and a scalar SSIM.

#![allow(dead_code)]

pub mod model_checks;
pub mod op_checks;

use echosr::{Element, Graph, Result, Shape4, Tensor4, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn<T: Element>(shape: Shape4, seed: u64) -> Tensor4<T> {
    Tensor4::randn(shape, 1.0, &mut rng(seed))
}

/// Values spaced at least `gap` apart in random order, so that argmax and
/// sign decisions are stable under small perturbations.
pub fn spaced<T: Element>(shape: Shape4, gap: f64, seed: u64) -> Tensor4<T> {
    let n = shape.numel();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    for i in (1..n).rev() {
        idx.swap(i, r.gen_range(0..=i));
    }
    // quarter-gap shift keeps every value away from zero
    let offset = (n as f64 - 1.0) * gap / 2.0 + gap / 4.0;
    let data = idx
        .into_iter()
        .map(|k| T::from_f64_lossy(k as f64 * gap - offset))
        .collect();
    Tensor4::from_vec(shape, data).unwrap()
}

#[derive(Debug)]
pub struct CheckReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic vector-Jacobian products of `f` with fourth-order central
/// finite differences of `<f(inputs), probe>` for every input flagged `true`.
///
/// The relative error of an element is `|a - n| / max(|a|, |n|, floor)` with
/// `floor = 1e-2 * max|n|` over that input, so elements whose true gradient is
/// orders of magnitude below the tensor's scale are compared absolutely.
/// `max_elems` bounds how many elements per input are probed.
pub fn gradcheck<T, F>(
    inputs: &[(Tensor4<T>, bool)],
    f: F,
    step: f64,
    max_elems: usize,
    seed: u64,
) -> Result<CheckReport>
where
    T: Element,
    F: for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Result<Var<'g, T>>,
{
    gradcheck_floor(inputs, f, step, max_elems, seed, Floor::PerInput)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Floor {
    /// `1e-2 * max|n|` over the same input tensor.
    PerInput,
    /// `1e-2 * max|n|` over every probed element of every input. Finite
    /// differences of a single-precision forward carry absolute noise set by
    /// the output, so a parameter whose whole gradient sits far below the
    /// largest one cannot be resolved relative to itself.
    Global,
}

pub fn gradcheck_floor<T, F>(
    inputs: &[(Tensor4<T>, bool)],
    f: F,
    step: f64,
    max_elems: usize,
    seed: u64,
    floor_kind: Floor,
) -> Result<CheckReport>
where
    T: Element,
    F: for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Result<Var<'g, T>>,
{
    let probe_shape = {
        let g = Graph::<T>::no_grad();
        let vars: Vec<_> = inputs.iter().map(|(t, _)| g.constant(t.clone())).collect();
        f(&g, &vars)?.shape()
    };
    let probe: Tensor4<T> = randn(probe_shape, seed ^ 0x9e37_79b9);

    let g = Graph::<T>::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|(t, rg)| g.leaf(t.clone(), *rg))
        .collect();
    let out = f(&g, &vars)?;
    let grads = g.backward_with_seed(&out, probe.clone())?;

    let eval = |ts: &[Tensor4<T>]| -> Result<f64> {
        let g = Graph::<T>::no_grad();
        let vars: Vec<_> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&g, &vars)?;
        Ok(y
            .value()
            .data()
            .iter()
            .zip(probe.data())
            .map(|(&a, &b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum())
    };

    let mut r = rng(seed);
    let mut report = CheckReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    // (input, element, analytic, numeric)
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (k, (t, rg)) in inputs.iter().enumerate() {
        if !*rg {
            continue;
        }
        let analytic = grads.wrt(&vars[k]);
        let n = t.numel();
        let picks: Vec<usize> = if n <= max_elems {
            (0..n).collect()
        } else {
            (0..max_elems).map(|_| r.gen_range(0..n)).collect()
        };
        for &i in &picks {
            // fourth-order central stencil at the representable offsets
            let mut ts: Vec<Tensor4<T>> = inputs.iter().map(|(t, _)| t.clone()).collect();
            let base = ts[k].data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                let v = T::from_f64_lossy(base.to_f64_lossy() + offset);
                ts[k].data_mut()[i] = v;
                eval(&ts)
            };
            let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            let num = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            rows.push((k, i, analytic.data()[i].to_f64_lossy(), num));
        }
    }
    let max_over = |k: Option<usize>| {
        rows.iter()
            .filter(|row| k.map_or(true, |k| row.0 == k))
            .fold(0.0f64, |m, row| m.max(row.3.abs()))
    };
    let global = max_over(None);
    for &(k, i, a, num) in &rows {
        let scale = match floor_kind {
            Floor::PerInput => max_over(Some(k)),
            Floor::Global => global,
        };
        let floor = (1e-2 * scale).max(1e-12);
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel {
            report.max_rel = rel;
            report.worst = format!("input {k} elem {i}: analytic {a:.6e} numeric {num:.6e}");
        }
    }
    Ok(report)
}

/// Direct nested-loop convolution in f64, zero padding, any groups.
pub fn conv_oracle(
    x: &Tensor4<f64>,
    w: &Tensor4<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    dilation: usize,
    groups: usize,
) -> Tensor4<f64> {
    let xs = x.shape();
    let ws = w.shape();
    let oc_total = ws.n;
    let icpg = ws.c;
    let ocpg = oc_total / groups;
    let oh = (xs.h + 2 * pad - dilation * (ws.h - 1) - 1) / stride + 1;
    let ow = (xs.w + 2 * pad - dilation * (ws.w - 1) - 1) / stride + 1;
    let mut out = Tensor4::zeros(Shape4::new(xs.n, oc_total, oh, ow));
    for n in 0..xs.n {
        for oc in 0..oc_total {
            let g = oc / ocpg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[oc]);
                    for icl in 0..icpg {
                        let ic = g * icpg + icl;
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += w.at(oc, icl, ky, kx) * x.at(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(n, oc, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Direct 2-D DFT of one plane: O((hw)²).
pub fn dft_oracle(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut ar, mut ai) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let theta = -2.0
                        * std::f64::consts::PI
                        * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    ar += plane[y * w + x] * theta.cos();
                    ai += plane[y * w + x] * theta.sin();
                }
            }
            re[u * w + v] = ar;
            im[u * w + v] = ai;
        }
    }
    (re, im)
}

/// Scalar SSIM reference: for every valid 11×11 window, weighted moments with
/// a normalized Gaussian (σ = 1.5) computed directly, then averaged.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut win = vec![0.0; k * k];
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            win[i * k + j] = v;
            total += v;
        }
    }
    for v in &mut win {
        *v /= total;
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=(h - k) {
        for x in 0..=(w - k) {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wv = win[i * k + j];
                    ma += wv * a[(y + i) * w + x + j];
                    mb += wv * b[(y + i) * w + x + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wv = win[i * k + j];
                    let da = a[(y + i) * w + x + j] - ma;
                    let db = b[(y + i) * w + x + j] - mb;
                    va += wv * da * da;
                    vb += wv * db * db;
                    cov += wv * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}
