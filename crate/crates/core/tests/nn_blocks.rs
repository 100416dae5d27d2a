mod common;


use echosr::nn::{
    self, blocks, count_params, model_specs, Bound, Branch, FfnKind, Mode, ModelConfig,
    ModelParams, ParamKind, ParamStore,
};
use echosr::tensor::kernels;
use echosr::{Error, Graph, Shape4, Tensor4};

use common::model_checks::micro_check;
use common::{randn, Floor};

fn store_for(cfg: &ModelConfig, seed: u64) -> ParamStore {
    ModelParams::init(cfg, seed).unwrap().store
}

/// Block-level params live at the root of the store for these tests.
fn block_store(f: fn(&mut nn::params::SpecBuilder, &str, &ModelConfig), cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut b = nn::params::SpecBuilder::default();
    f(&mut b, "", cfg);
    ParamStore::init(&b.specs, seed)
}

fn set(store: &mut ParamStore, name: &str, f: impl Fn(&mut Tensor4<f32>)) {
    f(store.tensors.get_mut(name).unwrap_or_else(|| panic!("no {name}")));
}

fn dirac(t: &mut Tensor4<f32>) {
    let s = t.shape();
    t.data_mut().fill(0.0);
    for c in 0..s.n {
        t.set(c, 0, s.h / 2, s.w / 2, 1.0);
    }
}

fn identity_pw(t: &mut Tensor4<f32>) {
    let s = t.shape();
    t.data_mut().fill(0.0);
    for c in 0..s.n {
        t.set(c, c, 0, 0, 1.0);
    }
}

type BlockFn = for<'g> fn(
    &nn::Scope<'_, '_, 'g>,
    &echosr::Var<'g, f32>,
    &ModelConfig,
) -> echosr::Result<echosr::Var<'g, f32>>;

fn run(f: BlockFn, store: &ParamStore, cfg: &ModelConfig, x: &Tensor4<f32>, mode: Mode) -> Tensor4<f32> {
    let g = Graph::<f32>::no_grad();
    let b = Bound::new(&g, store, mode, false);
    let xv = g.constant(x.clone());
    f(&b.root(), &xv, cfg).unwrap().value().clone()
}

/// Input-gradient support of `f` at the centre pixel (all output channels
/// seeded), reported per input channel as the Chebyshev radius of nonzeros.
fn support_radii(f: BlockFn, store: &ParamStore, cfg: &ModelConfig, size: usize) -> Vec<usize> {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, store, Mode::Eval, false);
    let x = g.leaf(randn(Shape4::new(1, cfg.channels, size, size), 5), true);
    let y = f(&b.root(), &x, cfg).unwrap();
    let mut seed = Tensor4::zeros(y.shape());
    let mid = size / 2;
    for c in 0..y.shape().c {
        seed.set(0, c, mid, mid, 1.0);
    }
    let grad = g.backward_with_seed(&y, seed).unwrap().wrt(&x);
    (0..cfg.channels)
        .map(|c| {
            let mut r = 0;
            for yy in 0..size {
                for xx in 0..size {
                    if grad.at(0, c, yy, xx) != 0.0 {
                        r = r.max(yy.abs_diff(mid).max(xx.abs_diff(mid)));
                    }
                }
            }
            r
        })
        .collect()
}

// ---------------------------------------------------------------- LA

#[test]
fn la_widths_follow_expansion() {
    let c = ModelConfig::echosr(2);
    assert_eq!((c.la_hidden(), c.la_groups()), (90, 15));
    let l = ModelConfig::echosr_lite(2);
    assert_eq!((l.la_hidden(), l.la_groups()), (54, 9));
    let specs = model_specs(&c);
    let group = specs
        .iter()
        .find(|s| s.name == "groups.0.chbs.0.la.group.weight")
        .unwrap();
    assert_eq!(group.shape, Shape4::new(90, 6, 3, 3));
}

#[test]
fn la_zero_weights_give_zero() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::la_specs, &cfg, 1);
    store.zero_prefix("");
    let x = randn(Shape4::new(2, 12, 9, 11), 2);
    let y = run(blocks::la_forward, &store, &cfg, &x, Mode::Eval);
    assert_eq!(y.shape(), x.shape());
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn indivisible_la_width_is_a_config_error() {
    let cfg = ModelConfig {
        channels: 20,
        la_expansion: 1.4,
        ..ModelConfig::micro(2, 20)
    };
    assert!(matches!(ModelParams::init(&cfg, 0), Err(Error::Config(_))));
}

// ---------------------------------------------------------------- MRFE

#[test]
fn mrfe_identity_branch_is_bit_exact() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::mrfe_specs, &cfg, 3);
    let x = randn(Shape4::new(1, 12, 10, 10), 4);
    let y = run(blocks::mrfe_forward, &store, &cfg, &x, Mode::Eval);
    for c in 0..3 {
        assert_eq!(y.plane(0, c), x.plane(0, c));
    }
    assert_ne!(y.plane(0, 3), x.plane(0, 3));
}

#[test]
fn mrfe_with_dirac_kernels_is_identity() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::mrfe_specs, &cfg, 3);
    for i in 1..4 {
        set(&mut store, &format!("branch{i}.weight"), dirac);
        set(&mut store, &format!("branch{i}.bias"), |t| t.data_mut().fill(0.0));
    }
    let x = randn(Shape4::new(2, 12, 7, 9), 4);
    let y = run(blocks::mrfe_forward, &store, &cfg, &x, Mode::Eval);
    assert_eq!(y.data(), x.data());
}

#[test]
fn mrfe_branch_supports() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::mrfe_specs, &cfg, 7);
    let radii = support_radii(blocks::mrfe_forward, &store, &cfg, 25);
    let per_branch: Vec<usize> = radii.chunks(3).map(|c| *c.iter().max().unwrap()).collect();
    assert_eq!(per_branch, vec![0, 2, 5, 8]);
}

#[test]
fn mrfe_perturbation_reaches_only_wide_branches() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::mrfe_specs, &cfg, 7);
    let x = randn(Shape4::new(1, 12, 25, 25), 8);
    let base = run(blocks::mrfe_forward, &store, &cfg, &x, Mode::Eval);
    // output location (12, 12); perturb every channel at Chebyshev distance d
    for (d, touched) in [(8usize, vec![false, false, false, true]), (9, vec![false; 4])] {
        let mut xp = x.clone();
        for c in 0..12 {
            let v = xp.at(0, c, 12 + d, 12);
            xp.set(0, c, 12 + d, 12, v + 1.0);
        }
        let y = run(blocks::mrfe_forward, &store, &cfg, &xp, Mode::Eval);
        let changed: Vec<bool> = (0..4)
            .map(|b| (3 * b..3 * b + 3).any(|c| y.at(0, c, 12, 12) != base.at(0, c, 12, 12)))
            .collect();
        assert_eq!(changed, touched, "distance {d}");
    }
}

#[test]
fn mrfe_rejects_uneven_split() {
    let cfg = ModelConfig {
        channels: 14,
        la_expansion: 3.0,
        ..ModelConfig::micro(2, 14)
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

// ---------------------------------------------------------------- GCP

#[test]
fn gcp_unit_attention_passes_input() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::gcp_specs, &cfg, 1);
    store.zero_prefix("");
    let x = randn(Shape4::new(1, 12, 20, 13), 2);
    let zero = run(blocks::gcp_forward, &store, &cfg, &x, Mode::Eval);
    assert!(zero.data().iter().all(|&v| v == 0.0));
    set(&mut store, "pw.bias", |t| t.data_mut().fill(1.0));
    let y = run(blocks::gcp_forward, &store, &cfg, &x, Mode::Eval);
    assert_eq!(y.data(), x.data());
}

#[test]
fn gcp_attention_depends_only_on_pooled_map() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::gcp_specs, &cfg, 1);
    let x = randn(Shape4::new(1, 12, 72, 72), 3);
    let (pooled, _) = kernels::max_pool(&x, 8, 8).unwrap();
    assert_eq!((pooled.shape().h, pooled.shape().w), (9, 9));

    // replacing every 8×8 cell by its maximum leaves the pooled map intact
    let mut flat = x.clone();
    for c in 0..12 {
        for y in 0..72 {
            for xx in 0..72 {
                flat.set(0, c, y, xx, pooled.at(0, c, y / 8, xx / 8));
            }
        }
    }
    let att = |t: &Tensor4<f32>| {
        let g = Graph::<f32>::no_grad();
        let b = Bound::new(&g, &store, Mode::Eval, false);
        let v = g.constant(t.clone());
        blocks::gcp_attention(&b.root(), &v, &cfg).unwrap().value().clone()
    };
    let a = att(&x);
    assert_eq!(a.shape(), x.shape());
    assert_eq!(a.data(), att(&flat).data());
}

// ---------------------------------------------------------------- CHB

#[test]
fn chb_zero_weights_is_identity() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::chb_specs, &cfg, 1);
    store.zero_prefix("");
    for mode in [Mode::Eval, Mode::Train] {
        let x = randn(Shape4::new(2, 12, 9, 17), 2);
        let y = run(blocks::chb_forward, &store, &cfg, &x, mode);
        assert_eq!(y.data(), x.data());
    }
}

#[test]
fn chb_with_lambda_zero_ignores_gcp() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::chb_specs, &cfg, 4);
    set(&mut store, "lambda", |t| t.data_mut().fill(0.0));
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &store, Mode::Train, true);
    let x = g.constant(randn(Shape4::new(2, 12, 16, 16), 5));
    let y = blocks::chb_forward(&b.root(), &x, &cfg).unwrap();
    let loss = y.mul(&y).unwrap().mean();
    let grads = g.backward(&loss).unwrap();
    for (name, v) in b.vars() {
        let gr = grads.wrt(v);
        if name.starts_with("gcp.") {
            assert!(gr.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert!(grads.wrt(&b.vars()["lambda"]).data()[0] != 0.0);
}

#[test]
fn chb_preserves_shape() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::chb_specs, &cfg, 4);
    for (h, w) in [(8, 8), (9, 13), (17, 8), (24, 31)] {
        let x = randn(Shape4::new(1, 12, h, w), 6);
        let y = run(blocks::chb_forward, &store, &cfg, &x, Mode::Eval);
        assert_eq!(y.shape(), x.shape());
    }
}

#[test]
fn eval_without_running_stats_fails() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::chb_specs, &cfg, 4);
    store.buffers.clear();
    let g = Graph::<f32>::no_grad();
    let b = Bound::new(&g, &store, Mode::Eval, false);
    let x = g.constant(randn(Shape4::new(1, 12, 8, 8), 6));
    let r = blocks::chb_forward(&b.root(), &x, &cfg);
    assert!(matches!(r, Err(Error::UninitializedStats(_))));
}

// ---------------------------------------------------------------- COFB

#[test]
fn cofb_zero_output_projection() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::cofb_specs, &cfg, 1);
    set(&mut store, "pw_out.weight", |t| t.data_mut().fill(0.0));
    let x = randn(Shape4::new(1, 12, 10, 10), 2);
    let y = run(blocks::cofb_forward, &store, &cfg, &x, Mode::Eval);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn cofb_cascade_support_is_21() {
    let cfg = ModelConfig::micro(2, 12);
    let store = block_store(nn::params::cofb_specs, &cfg, 9);
    let bar: BlockFn = |s, x, c| Ok(blocks::cofb_parts(s, x, c)?.bar);
    let radii = support_radii(bar, &store, &cfg, 31);
    assert!(radii.iter().all(|&r| r == 10), "{radii:?}");
}

#[test]
fn cofb_identity_composition() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = block_store(nn::params::cofb_specs, &cfg, 1);
    store.zero_prefix("");
    for n in ["pw_in", "pw_mid", "pw_out"] {
        set(&mut store, &format!("{n}.weight"), identity_pw);
    }
    for n in ["dw0", "dw1"] {
        set(&mut store, &format!("{n}.weight"), dirac);
    }
    let g = Graph::<f32>::no_grad();
    let b = Bound::new(&g, &store, Mode::Eval, false);
    let x = g.constant(randn(Shape4::new(1, 12, 9, 9), 3));
    let parts = blocks::cofb_parts(&b.root(), &x, &cfg).unwrap();
    assert_eq!(parts.bar.value().data(), parts.hat.value().data());
    let hat = parts.hat.value();
    let expect = hat.zip_map(hat, "sq", |a, b| a * b).unwrap();
    assert_eq!(parts.out.value().data(), expect.data());
    let gelu_x = x.value().map(kernels::gelu);
    assert_eq!(hat.data(), gelu_x.data());
}

// ---------------------------------------------------------------- CHRG and full network

#[test]
fn chrg_zero_weights_is_identity() {
    let cfg = ModelConfig::micro(2, 12);
    let mut b = nn::params::SpecBuilder::default();
    nn::params::chrg_specs(&mut b, "", &cfg, 2);
    let mut store = ParamStore::init(&b.specs, 0);
    store.zero_prefix("");
    let g = Graph::<f32>::no_grad();
    let bound = Bound::new(&g, &store, Mode::Eval, false);
    let x = g.constant(randn(Shape4::new(1, 12, 11, 8), 1));
    let y = blocks::chrg_forward(&bound.root(), &x, &cfg, 2).unwrap();
    assert_eq!(y.value().data(), x.value().data());
}

#[test]
fn group_block_counts() {
    let full = model_specs(&ModelConfig::echosr(2));
    let lite = model_specs(&ModelConfig::echosr_lite(2));
    let count = |specs: &[nn::ParamSpec], g: usize| {
        specs
            .iter()
            .filter(|s| s.name.starts_with(&format!("groups.{g}.chbs.")) && s.name.ends_with(".lambda"))
            .count()
    };
    assert_eq!((0..4).map(|g| count(&full, g)).collect::<Vec<_>>(), vec![5; 4]);
    assert_eq!((0..4).map(|g| count(&lite, g)).collect::<Vec<_>>(), vec![2, 3, 2, 3]);
}

#[test]
fn full_model_shapes() {
    let p = ModelParams::init(&ModelConfig::echosr(2), 0).unwrap();
    let x = Tensor4::rand_uniform(Shape4::new(1, 3, 72, 72), 0.0, 1.0, &mut common::rng(1));
    let y = nn::infer(&p, &x).unwrap();
    assert_eq!(y.shape(), Shape4::new(1, 3, 144, 144));

    let p = ModelParams::init(&ModelConfig::micro(4, 12), 0).unwrap();
    let x = Tensor4::rand_uniform(Shape4::new(1, 3, 16, 24), 0.0, 1.0, &mut common::rng(1));
    let y = nn::infer(&p, &x).unwrap();
    assert_eq!(y.shape(), Shape4::new(1, 3, 64, 96));
    assert_eq!(y.data(), nn::infer(&p, &x).unwrap().data());
}

#[test]
fn invalid_scale_is_config_error() {
    let mut p = ModelParams::init(&ModelConfig::micro(2, 12), 0).unwrap();
    p.config.scale = 5;
    let x = Tensor4::zeros(Shape4::new(1, 3, 8, 8));
    assert!(matches!(nn::infer(&p, &x), Err(Error::Config(_))));
    assert!(ModelParams::init(&ModelConfig::micro(5, 12), 0).is_err());
}

// ---------------------------------------------------------------- FFN

#[test]
fn ffn_zero_weights_and_shapes() {
    for kind in [FfnKind::Plain, FfnKind::Gate, FfnKind::ChannelAggregation] {
        let cfg = ModelConfig {
            ffn_kind: kind,
            ..ModelConfig::micro(2, 12)
        };
        let mut store = block_store(nn::params::ffn_specs, &cfg, 2);
        let x = randn(Shape4::new(2, 12, 9, 10), 3);
        let y = run(blocks::ffn_forward, &store, &cfg, &x, Mode::Eval);
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().any(|&v| v != 0.0));
        store.zero_prefix("");
        let y = run(blocks::ffn_forward, &store, &cfg, &x, Mode::Eval);
        assert!(y.data().iter().all(|&v| v == 0.0), "{kind:?}");
    }
}

#[test]
fn plain_ffn_count() {
    let cfg = ModelConfig {
        ffn_kind: FfnKind::Plain,
        ffn_expansion: 2.0,
        ..ModelConfig::echosr(2)
    };
    let mut b = nn::params::SpecBuilder::default();
    nn::params::ffn_specs(&mut b, "", &cfg);
    let n: usize = b.specs.iter().map(|s| s.shape.numel()).sum();
    assert_eq!(n, 60 * 120 + 120 + 120 * 60 + 60);
    assert_eq!(n, 14_580);
}

// ---------------------------------------------------------------- init and counting

#[test]
fn init_reproducible_and_lambda() {
    let cfg = ModelConfig::echosr_lite(2);
    let a = ModelParams::init(&cfg, 11).unwrap();
    assert_eq!(a, ModelParams::init(&cfg, 11).unwrap());
    let lambdas: Vec<f32> = a
        .store
        .tensors
        .iter()
        .filter(|(k, _)| k.ends_with(".lambda"))
        .map(|(_, t)| t.data()[0])
        .collect();
    assert_eq!(lambdas.len(), 10);
    assert!(lambdas.iter().all(|&l| l == 0.1));
    for spec in model_specs(&cfg) {
        let t = a
            .store
            .tensors
            .get(&spec.name)
            .or_else(|| a.store.buffers.get(&spec.name))
            .unwrap();
        match spec.kind {
            ParamKind::Bias | ParamKind::NormBias | ParamKind::RunningMean => {
                assert!(t.data().iter().all(|&v| v == 0.0), "{}", spec.name)
            }
            ParamKind::NormWeight | ParamKind::RunningVar => {
                assert!(t.data().iter().all(|&v| v == 1.0), "{}", spec.name)
            }
            _ => {}
        }
    }
}

#[test]
fn init_variance_matches_fan_in() {
    let cfg = ModelConfig::echosr(2);
    let p = ModelParams::init(&cfg, 2).unwrap();
    let mut checked = 0;
    for spec in model_specs(&cfg) {
        let ParamKind::ConvWeight { fan_in } = spec.kind else {
            continue;
        };
        if spec.shape.numel() < 3000 {
            continue;
        }
        let d = p.store.tensors[&spec.name].data();
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let target = nn::params::INIT_GAIN / fan_in as f64;
        assert!((var / target - 1.0).abs() < 0.1, "{}: {var} vs {target}", spec.name);
        checked += 1;
    }
    assert!(checked > 50);
}

#[test]
fn store_round_trips_against_walker() {
    let cfg = ModelConfig::echosr(3);
    let p = ModelParams::init(&cfg, 0).unwrap();
    p.store.check_against(&model_specs(&cfg)).unwrap();

    let mut missing = p.store.clone();
    missing.tensors.remove("groups.2.chbs.4.lambda");
    assert!(matches!(
        missing.check_against(&model_specs(&cfg)),
        Err(Error::MissingParam(n)) if n == "groups.2.chbs.4.lambda"
    ));

    let mut reshaped = p.store.clone();
    reshaped
        .tensors
        .insert("tail.bias".into(), Tensor4::zeros(Shape4::new(1, 3, 1, 1)));
    assert!(matches!(
        reshaped.check_against(&model_specs(&cfg)),
        Err(Error::ParamShape { .. })
    ));
}

#[test]
fn param_counts() {
    for (scale, target) in [(2, 929_000.0), (3, 937_000.0), (4, 948_000.0)] {
        let n = count_params(&ModelConfig::echosr(scale)) as f64;
        assert!((n / target - 1.0).abs() <= 0.05, "x{scale}: {n}");
    }
    for (scale, target) in [(2, 245_000.0), (3, 250_000.0), (4, 257_000.0)] {
        let n = count_params(&ModelConfig::echosr_lite(scale)) as f64;
        assert!((n / target - 1.0).abs() <= 0.05, "lite x{scale}: {n}");
    }
    let c = 60;
    let delta = count_params(&ModelConfig::echosr(4)) - count_params(&ModelConfig::echosr(2));
    assert_eq!(delta, 3 * (16 - 4) * 9 * c + 3 * (16 - 4));
    let cfg = ModelConfig::echosr(2);
    assert_eq!(
        ModelParams::init(&cfg, 1).unwrap().count(),
        ModelParams::init(&cfg, 99).unwrap().count()
    );
    assert_eq!(ModelParams::init(&cfg, 1).unwrap().count(), count_params(&cfg));
}

#[test]
fn mrfe_kernel_lists_are_configurable() {
    let cfg = ModelConfig {
        mrfe_kernels: vec![Branch::Identity, Branch::Depthwise(3), Branch::Depthwise(7)],
        ..ModelConfig::micro(2, 12)
    };
    let p = ModelParams::init(&cfg, 0).unwrap();
    let x = Tensor4::zeros(Shape4::new(1, 3, 8, 8));
    assert_eq!(nn::infer(&p, &x).unwrap().shape(), Shape4::new(1, 3, 16, 16));
    assert!(p.store.tensors.contains_key("groups.0.chbs.0.mrfe.branch2.weight"));
}

// ---------------------------------------------------------------- gradients

#[test]
fn every_parameter_receives_gradient() {
    let cfg = ModelConfig::micro(2, 12);
    let mut total = 0usize;
    let mut nonzero = 0usize;
    for seed in 0..3 {
        let store = store_for(&cfg, seed);
        let g = Graph::<f32>::new();
        let b = Bound::new(&g, &store, Mode::Train, true);
        let x = g.constant(Tensor4::rand_uniform(
            Shape4::new(2, 3, 16, 16),
            0.0,
            1.0,
            &mut common::rng(seed + 10),
        ));
        let gt = g.constant(randn(Shape4::new(2, 3, 32, 32), seed + 20));
        let y = nn::echosr_forward(&b.root(), &x, &cfg).unwrap();
        let loss = y.sub(&gt).unwrap().abs().mean();
        let grads = g.backward(&loss).unwrap();
        for (name, v) in b.vars() {
            let gr = grads.wrt(v);
            total += gr.numel();
            nonzero += gr.data().iter().filter(|&&v| v != 0.0).count();
            if name.ends_with("lambda") {
                assert!(gr.data()[0] != 0.0, "{name}");
            }
        }
    }
    let frac = nonzero as f64 / total as f64;
    assert!(frac >= 0.99, "{frac}");
}

#[test]
fn micro_model_gradcheck_f32() {
    for seed in 0..5 {
        for mode in [Mode::Eval, Mode::Train] {
            let r = micro_check::<f32>(seed, mode, 1e-2, Floor::Global);
            assert!(r.max_rel < 1e-2, "seed {seed} {mode:?}: {r:?}");
        }
    }
}

#[test]
fn micro_model_gradcheck_f64() {
    for seed in 0..5 {
        for mode in [Mode::Eval, Mode::Train] {
            // biases feeding batch statistics have exactly zero gradient in
            // training mode, so the per-tensor comparison only applies in eval
            if mode == Mode::Eval {
                let r = micro_check::<f64>(seed, mode, 1e-2, Floor::PerInput);
                assert!(r.max_rel < 1e-2, "seed {seed} {mode:?}: {r:?}");
            }
            let r = micro_check::<f64>(seed, mode, 1e-2, Floor::Global);
            assert!(r.max_rel < 1e-4, "seed {seed} {mode:?}: {r:?}");
        }
    }
}

#[test]
fn stat_updates_move_running_buffers() {
    let cfg = ModelConfig::micro(2, 12);
    let mut store = store_for(&cfg, 0);
    let updates = {
        let g = Graph::<f32>::no_grad();
        let b = Bound::new(&g, &store, Mode::Train, false);
        let x = g.constant(randn(Shape4::new(2, 3, 8, 8), 1).map(|v| v + 3.0));
        nn::echosr_forward(&b.root(), &x, &cfg).unwrap();
        b.take_stat_updates()
    };
    assert_eq!(updates.len(), 2);
    let u = &updates[0];
    nn::apply_stat_updates(&mut store, &updates).unwrap();
    let rm = &store.buffers["groups.0.chbs.0.norm1.running_mean"];
    let rv = &store.buffers["groups.0.chbs.0.norm1.running_var"];
    let m = u.count as f32;
    for c in 0..12 {
        assert!((rm.data()[c] - 0.1 * u.mean[c]).abs() < 1e-6);
        let unbiased = u.var[c] * m / (m - 1.0);
        assert!((rv.data()[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-5);
    }
}

