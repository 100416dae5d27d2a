//! Pixel and frequency-domain L1 objectives.

use serde::Serialize;

use crate::error::Result;
use crate::tensor::{Element, Var};

/// Weight of the frequency term in the training objective.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub pixel: f64,
    pub freq: f64,
    /// `pixel + alpha * freq`, evaluated in f64.
    pub total: f64,
    pub alpha: f64,
}

fn check_shapes<T: Element>(sr: &Var<'_, T>, gt: &Var<'_, T>, op: &'static str) -> Result<()> {
    sr.value().ensure_same_shape(gt.value(), op)
}

/// Mean absolute difference over every element.
pub fn pixel_loss<'g, T: Element>(sr: &Var<'g, T>, gt: &Var<'g, T>) -> Result<Var<'g, T>> {
    check_shapes(sr, gt, "pixel_loss")?;
    Ok(sr.sub(gt)?.abs().mean())
}

/// L1 distance between the 2-D spectra of every plane, real and imaginary
/// parts taken separately, divided by the number of complex bins.
///
/// A constant difference `d` on a plane gives `|d|`.
pub fn freq_loss<'g, T: Element>(sr: &Var<'g, T>, gt: &Var<'g, T>) -> Result<Var<'g, T>> {
    check_shapes(sr, gt, "freq_loss")?;
    // the transform is linear, so the spectrum of the difference suffices
    let packed = sr.sub(gt)?.dft2_packed()?;
    Ok(packed.abs().mean().scale(T::from_f64_lossy(2.0)))
}

/// Differentiable `pixel + alpha * freq` together with its report.
pub fn total_loss<'g, T: Element>(
    sr: &Var<'g, T>,
    gt: &Var<'g, T>,
    alpha: f64,
) -> Result<(Var<'g, T>, LossReport)> {
    let pixel = pixel_loss(sr, gt)?;
    let freq = freq_loss(sr, gt)?;
    let total = pixel.add(&freq.scale(T::from_f64_lossy(alpha)))?;
    let p = pixel.value().data()[0].to_f64_lossy();
    let f = freq.value().data()[0].to_f64_lossy();
    let report = LossReport {
        pixel: p,
        freq: f,
        total: p + alpha * f,
        alpha,
    };
    Ok((total, report))
}
