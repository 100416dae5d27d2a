use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::save_gray_png;
use crate::error::{Error, Result};
use crate::nn::{chb_forward, cofb_forward, echosr_forward, mrfe_forward, Bound, Mode, ModelConfig, ModelParams};
use crate::tensor::{ConvSpec, Graph, Shape4, Tensor4, Var};

/// Cumulative-contribution thresholds reported by [`area_ratio`].
pub const THRESHOLDS: [f64; 7] = [0.10, 0.20, 0.30, 0.50, 0.70, 0.90, 0.95];

/// Accumulated absolute input gradient of a center output response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<f64>,
}

impl ErfMap {
    pub fn new(height: usize, width: usize, grid: Vec<f64>) -> Result<Self> {
        crate::error::ensure_dim("ErfMap::new", "cells", height * width, grid.len())?;
        if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Degenerate("map entries must be finite and non-negative".into()));
        }
        Ok(ErfMap { height, width, grid })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.grid[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// Copy scaled so the largest entry is 1.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.grid.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            self.grid.iter().map(|v| v / max).collect()
        } else {
            self.grid.clone()
        }
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)` of the nonzero entries.
    pub fn support(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (i, &v) in self.grid.iter().enumerate() {
            if v != 0.0 {
                let (y, x) = (i / self.width, i % self.width);
                bb = Some(match bb {
                    None => (y, x, y, x),
                    Some((a, b, c, d)) => (a.min(y), b.min(x), c.max(y), d.max(x)),
                });
            }
        }
        bb
    }

    /// Largest Chebyshev distance of a nonzero entry from `(cy, cx)`.
    pub fn radius_from(&self, cy: usize, cx: usize) -> Option<usize> {
        let (y0, x0, y1, x1) = self.support()?;
        Some(
            [cy.abs_diff(y0), cy.abs_diff(y1), cx.abs_diff(x0), cx.abs_diff(x1)]
                .into_iter()
                .max()
                .unwrap(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErfOptions {
    pub samples: usize,
    pub seed: u64,
    /// Seed the backward pass from this output channel only.
    pub channel: Option<usize>,
}

impl Default for ErfOptions {
    fn default() -> Self {
        ErfOptions {
            samples: 8,
            seed: 0,
            channel: None,
        }
    }
}

/// ERF maps for several outputs of one forward function, sharing the random
/// inputs. Each output is seeded with ones at its center pixel (over all
/// channels, or just `opts.channel`) and `|d/dx|` is summed over input
/// channels and samples.
pub fn erf_maps<F>(in_channels: usize, h: usize, w: usize, opts: &ErfOptions, forward: F) -> Result<Vec<ErfMap>>
where
    F: for<'g> Fn(&'g Graph<f32>, &Var<'g, f32>) -> Result<Vec<Var<'g, f32>>>,
{
    if opts.samples == 0 {
        return Err(Error::Config("ERF needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut acc: Vec<Vec<f64>> = Vec::new();
    for _ in 0..opts.samples {
        let input = Tensor4::<f32>::randn(Shape4::new(1, in_channels, h, w), 1.0, &mut rng);
        let g = Graph::<f32>::new();
        let x = g.param(input);
        let outs = forward(&g, &x)?;
        if acc.is_empty() {
            acc = vec![vec![0.0; h * w]; outs.len()];
        }
        for (out, map) in outs.iter().zip(acc.iter_mut()) {
            let s = out.shape();
            let (cy, cx) = (s.h / 2, s.w / 2);
            let mut seed = Tensor4::zeros(s);
            for c in 0..s.c {
                if opts.channel.is_none_or(|k| k == c) {
                    seed.set(0, c, cy, cx, 1.0);
                }
            }
            let grads = g.backward_with_seed(out, seed)?;
            let gx = grads.wrt(&x);
            for c in 0..in_channels {
                for (m, v) in map.iter_mut().zip(gx.plane(0, c)) {
                    *m += v.abs() as f64;
                }
            }
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, grid)| {
            let map = ErfMap::new(h, w, grid)?;
            if map.total() <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "ERF of output {i} is identically zero (disconnected graph?)"
                )));
            }
            Ok(map)
        })
        .collect()
}

pub fn erf_map<F>(in_channels: usize, h: usize, w: usize, opts: &ErfOptions, forward: F) -> Result<ErfMap>
where
    F: for<'g> Fn(&'g Graph<f32>, &Var<'g, f32>) -> Result<Var<'g, f32>>,
{
    let mut maps = erf_maps(in_channels, h, w, opts, |g, x| Ok(vec![forward(g, x)?]))?;
    Ok(maps.remove(0))
}

/// ERF of the whole network's center output pixel over an `h×w` LR input.
pub fn model_erf(params: &ModelParams, h: usize, w: usize, opts: &ErfOptions) -> Result<ErfMap> {
    erf_map(3, h, w, opts, |g, x| {
        let bound = Bound::new(g, &params.store, Mode::Eval, false);
        echosr_forward(&bound.root(), x, &params.config)
    })
}

/// ERFs of the features entering and leaving the cascade block of `group`,
/// measured from the LR input. Eval mode.
pub fn cofb_erf(params: &ModelParams, group: usize, h: usize, w: usize, opts: &ErfOptions) -> Result<(ErfMap, ErfMap)> {
    let cfg = &params.config;
    if group >= cfg.num_groups {
        return Err(Error::Config(format!("group {group} out of range ({} groups)", cfg.num_groups)));
    }
    let mut maps = erf_maps(3, h, w, opts, |g, x| {
        let bound = Bound::new(g, &params.store, Mode::Eval, false);
        let s = bound.root();
        let mut y = s.conv("head", x, &ConvSpec::same(3, cfg.channels, 3, 1))?;
        for i in 0..group {
            y = crate::nn::chrg_forward(&s.child(&format!("groups.{i}")), &y, cfg, cfg.chbs_per_group[i])?;
        }
        let gs = s.child(&format!("groups.{group}"));
        for j in 0..cfg.chbs_per_group[group] {
            y = chb_forward(&gs.child(&format!("chbs.{j}")), &y, cfg)?;
        }
        let after = cofb_forward(&gs.child("cofb"), &y, cfg)?;
        Ok(vec![y, after])
    })?;
    let after = maps.pop().unwrap();
    let before = maps.pop().unwrap();
    Ok((before, after))
}

/// One ERF per branch of the first multi-range block of `group`, taken on the
/// block in isolation with `channels`-wide random input.
pub fn mrfe_branch_erfs(params: &ModelParams, group: usize, h: usize, w: usize, opts: &ErfOptions) -> Result<Vec<ErfMap>> {
    let cfg = &params.config;
    if group >= cfg.num_groups {
        return Err(Error::Config(format!("group {group} out of range ({} groups)", cfg.num_groups)));
    }
    let branches = cfg.mrfe_kernels.len();
    let bc = cfg.branch_channels();
    erf_maps(cfg.channels, h, w, opts, |g, x| {
        let bound = Bound::new(g, &params.store, Mode::Eval, false);
        let y = mrfe_forward(&bound.root().child(&format!("groups.{group}.chbs.0.mrfe")), x, cfg)?;
        (0..branches).map(|i| y.channel_slice(i * bc, bc)).collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRatioTable {
    pub context: String,
    pub thresholds: Vec<f64>,
    /// Fraction of cells needed to reach each threshold.
    pub ratios: Vec<f64>,
}

/// Smallest fraction of cells whose largest contributions sum to at least
/// `t` of the total, for each `t`. Ties are broken by cell index.
pub fn area_ratio(map: &ErfMap, thresholds: &[f64], context: &str) -> Result<AreaRatioTable> {
    let total = map.total();
    if !(total > 0.0) {
        return Err(Error::Degenerate("area ratio of a zero-mass map".into()));
    }
    let mut order: Vec<usize> = (0..map.grid.len()).collect();
    order.sort_by(|&a, &b| map.grid[b].total_cmp(&map.grid[a]).then(a.cmp(&b)));
    let mut cum = Vec::with_capacity(order.len());
    let mut s = 0.0;
    for &i in &order {
        s += map.grid[i];
        cum.push(s / total);
    }
    let n = cum.len();
    let ratios = thresholds
        .iter()
        .map(|&t| {
            // guard against the last partial sum rounding below 1
            let k = cum.iter().position(|&c| c >= t - 1e-12).unwrap_or(n - 1);
            (k + 1) as f64 / n as f64
        })
        .collect();
    Ok(AreaRatioTable {
        context: context.to_string(),
        thresholds: thresholds.to_vec(),
        ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfComparison {
    pub before: AreaRatioTable,
    pub after: AreaRatioTable,
    /// `(after - before) / before` per threshold.
    pub change: Vec<f64>,
}

pub fn compare_erf(before: &ErfMap, after: &ErfMap, thresholds: &[f64]) -> Result<ErfComparison> {
    let b = area_ratio(before, thresholds, "before")?;
    let a = area_ratio(after, thresholds, "after")?;
    let change = b.ratios.iter().zip(&a.ratios).map(|(b, a)| (a - b) / b).collect();
    Ok(ErfComparison {
        before: b,
        after: a,
        change,
    })
}

/// Before/after comparison for a model whose cascade uses `kernels`, with all
/// other weights drawn from the same seed.
pub fn cofb_order_study(
    base: &ModelConfig,
    kernels: &[usize],
    init_seed: u64,
    size: usize,
    opts: &ErfOptions,
) -> Result<ErfComparison> {
    let cfg = ModelConfig {
        cofb_kernels: kernels.to_vec(),
        ..base.clone()
    };
    let params = ModelParams::init(&cfg, init_seed)?;
    let (before, after) = cofb_erf(&params, 0, size, size, opts)?;
    compare_erf(&before, &after, &THRESHOLDS)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    map: &'a ErfMap,
    area_ratio: &'a AreaRatioTable,
}

/// Writes a grayscale heatmap (darker is larger) and a JSON sidecar holding
/// the raw grid and its area-ratio table.
pub fn save_heatmap(map: &ErfMap, png: impl AsRef<Path>, json: impl AsRef<Path>) -> Result<AreaRatioTable> {
    let pixels: Vec<u8> = map
        .normalized()
        .iter()
        .map(|v| 255 - (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    save_gray_png(&pixels, map.width, map.height, png)?;
    let table = area_ratio(map, &THRESHOLDS, "erf")?;
    let json = json.as_ref();
    let text = serde_json::to_string_pretty(&Sidecar {
        map,
        area_ratio: &table,
    })?;
    std::fs::write(json, text).map_err(|e| Error::io(json, e))?;
    Ok(table)
}
