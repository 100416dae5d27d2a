//! Effective receptive fields, area-ratio statistics, parameter accounting
//! and latency measurement.

pub mod erf;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use erf::{
    area_ratio, cofb_erf, cofb_order_study, compare_erf, erf_map, erf_maps, model_erf, mrfe_branch_erfs, save_heatmap,
    AreaRatioTable, ErfComparison, ErfMap, ErfOptions, THRESHOLDS,
};

use crate::error::{Error, Result};
use crate::nn::{echosr_forward, infer, model_specs, Bound, Mode, ModelConfig, ModelParams};
use crate::tensor::{Graph, Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Bytes of every value a recording forward pass keeps alive; an upper
    /// estimate of the transient peak of one inference.
    pub peak_bytes: usize,
}

/// Times `repeats` eval-mode forward passes on a random `h×w` input after one
/// warm-up pass.
pub fn bench(params: &ModelParams, h: usize, w: usize, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Config("bench needs at least one repeat".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor4::<f32>::rand_uniform(Shape4::new(1, 3, h, w), 0.0, 1.0, &mut rng);
    infer(params, &x)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(infer(params, &x)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / repeats as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * repeats as f64).ceil() as usize).clamp(1, repeats);
    let p95_ms = if repeats == 1 { mean_ms } else { sorted[rank - 1] };

    let g = Graph::<f32>::new();
    let bound = Bound::new(&g, &params.store, Mode::Eval, false);
    let input = g.constant(x);
    echosr_forward(&bound.root(), &input, &params.config)?;
    Ok(BenchReport {
        height: h,
        width: w,
        repeats,
        mean_ms,
        p95_ms,
        peak_bytes: g.retained_bytes(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub module: String,
    pub params: usize,
    pub share: f64,
}

/// Module categories in report order.
pub const MODULES: [&str; 9] = ["head", "la", "mrfe", "gcp", "lambda", "norm", "ffn", "cofb", "tail"];

fn module_of(name: &str) -> &'static str {
    if name.starts_with("head.") {
        return "head";
    }
    if name.starts_with("tail.") {
        return "tail";
    }
    let parts: Vec<&str> = name.split('.').collect();
    for p in &parts {
        match *p {
            "la" => return "la",
            "mrfe" => return "mrfe",
            "gcp" => return "gcp",
            "ffn" => return "ffn",
            "cofb" => return "cofb",
            "norm1" | "norm2" => return "norm",
            "lambda" => return "lambda",
            _ => {}
        }
    }
    "other"
}

/// Learnable parameters per module category; the rows sum to `count_params`.
pub fn param_report(config: &ModelConfig) -> Result<Vec<ParamRow>> {
    config.validate()?;
    let mut counts = vec![0usize; MODULES.len()];
    for spec in model_specs(config).iter().filter(|s| s.kind.learnable()) {
        let m = module_of(&spec.name);
        let i = MODULES
            .iter()
            .position(|&x| x == m)
            .ok_or_else(|| Error::Internal(format!("unclassified parameter `{}`", spec.name)))?;
        counts[i] += spec.shape.numel();
    }
    let total: usize = counts.iter().sum();
    Ok(MODULES
        .iter()
        .zip(counts)
        .map(|(m, n)| ParamRow {
            module: m.to_string(),
            params: n,
            share: n as f64 / total as f64,
        })
        .collect())
}
