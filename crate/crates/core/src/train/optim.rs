use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments, one pair per learnable tensor. No weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor4<f32>>,
    pub v: BTreeMap<String, Tensor4<f32>>,
}

impl OptimState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor4::zeros(t.shape())))
                .collect()
        };
        OptimState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters missing from `grads` are treated as having zero
    /// gradient. Any non-finite gradient aborts before anything is modified.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Tensor4<f32>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            let p = store.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    expected: p.shape().dims(),
                    found: g.shape().dims(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, p) in store.tensors.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor4::zeros(p.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor4::zeros(p.shape()));
            let g = grads.get(name);
            for i in 0..p.numel() {
                let gi = g.map_or(0.0, |g| g.data()[i] as f64);
                let mi = beta1 * m.data()[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v.data()[i] as f64 + (1.0 - beta2) * gi * gi;
                m.data_mut()[i] = mi as f32;
                v.data_mut()[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                let pi = &mut p.data_mut()[i];
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}
