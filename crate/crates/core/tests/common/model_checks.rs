//! Finite-difference check of the whole micro network, input and every
//! learnable tensor at once.

use std::collections::BTreeMap;

use echosr::nn::{self, Bound, Mode, ModelConfig, ParamStore};
use echosr::{Element, Shape4, Tensor4};

use super::{gradcheck_floor, CheckReport, Floor};

pub fn micro_store(cfg: &ModelConfig, seed: u64) -> ParamStore {
    ParamStore::init(&nn::model_specs(cfg), seed)
}

pub fn micro_check<T: Element>(seed: u64, mode: Mode, step: f64, floor: Floor) -> CheckReport {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = micro_store(&cfg, seed);
    // the aggregation scale starts near zero, which would hide its path
    store
        .get_mut("groups.0.chbs.0.ffn.sigma")
        .unwrap()
        .data_mut()
        .fill(0.5);
    let names: Vec<String> = store.tensors.keys().cloned().collect();
    let lr: Tensor4<f32> =
        Tensor4::rand_uniform(Shape4::new(1, 3, 16, 16), 0.0, 1.0, &mut super::rng(seed + 100));
    let mut inputs = vec![(lr.cast::<T>(), true)];
    inputs.extend(store.tensors.values().map(|t| (t.cast::<T>(), true)));
    let buffers = store.buffers.clone();
    gradcheck_floor(
        &inputs,
        |g, vars| {
            let map: BTreeMap<String, _> = names.iter().cloned().zip(vars[1..].iter().cloned()).collect();
            let b = Bound::from_vars(g, map, &buffers, mode);
            nn::echosr_forward(&b.root(), &vars[0], &cfg)
        },
        step,
        4,
        seed + 7,
        floor,
    )
    .unwrap()
}
