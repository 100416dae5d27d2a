use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Branch, FfnKind, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    Bias,
    NormWeight,
    NormBias,
    /// Learnable scalar gate, initialized to the given value.
    Scalar(f32),
    /// Per-channel learnable scale, initialized to the given value.
    ChannelScale(f32),
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn learnable(&self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape4,
    pub kind: ParamKind,
}

/// Collects parameter declarations in walk order.
#[derive(Debug, Default)]
pub struct SpecBuilder {
    pub specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Shape4, kind: ParamKind) {
        self.specs.push(ParamSpec { name, shape, kind });
    }

    pub fn conv(&mut self, prefix: &str, spec: &ConvSpec, bias: bool) {
        let ws = spec.weight_shape();
        let fan_in = ws.c * ws.h * ws.w;
        self.push(
            format!("{prefix}.weight"),
            ws,
            ParamKind::ConvWeight { fan_in },
        );
        if bias {
            self.push(
                format!("{prefix}.bias"),
                Shape4::new(1, spec.out_channels, 1, 1),
                ParamKind::Bias,
            );
        }
    }

    pub fn norm(&mut self, prefix: &str, channels: usize) {
        let s = Shape4::new(1, channels, 1, 1);
        self.push(format!("{prefix}.weight"), s, ParamKind::NormWeight);
        self.push(format!("{prefix}.bias"), s, ParamKind::NormBias);
        self.push(format!("{prefix}.running_mean"), s, ParamKind::RunningMean);
        self.push(format!("{prefix}.running_var"), s, ParamKind::RunningVar);
    }

    pub fn scalar(&mut self, name: &str, init: f32) {
        self.push(name.to_string(), Shape4::scalar(), ParamKind::Scalar(init));
    }

    pub fn channel_scale(&mut self, name: &str, channels: usize, init: f32) {
        self.push(
            name.to_string(),
            Shape4::new(channels, 1, 1, 1),
            ParamKind::ChannelScale(init),
        );
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn la_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let c = cfg.channels;
    let hidden = cfg.la_hidden();
    b.conv(&join(prefix, "expand"), &ConvSpec::pointwise(c, hidden), true);
    b.conv(
        &join(prefix, "group"),
        &ConvSpec::same(hidden, hidden, 3, cfg.la_groups()),
        true,
    );
    b.conv(&join(prefix, "compress"), &ConvSpec::pointwise(hidden, c), true);
}

pub fn mrfe_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let bc = cfg.branch_channels();
    for (i, branch) in cfg.mrfe_kernels.iter().enumerate() {
        if let Branch::Depthwise(k) = branch {
            b.conv(
                &join(prefix, &format!("branch{i}")),
                &ConvSpec::depthwise(bc, *k),
                true,
            );
        }
    }
}

pub fn gcp_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let c = cfg.channels;
    b.conv(&join(prefix, "dw"), &ConvSpec::depthwise(c, 3), true);
    b.conv(&join(prefix, "pw"), &ConvSpec::pointwise(c, c), true);
}

pub fn ffn_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let c = cfg.channels;
    let h = cfg.ffn_hidden();
    match cfg.ffn_kind {
        FfnKind::Plain => {
            b.conv(&join(prefix, "fc1"), &ConvSpec::pointwise(c, h), true);
            b.conv(&join(prefix, "fc2"), &ConvSpec::pointwise(h, c), true);
        }
        FfnKind::Gate => {
            b.conv(&join(prefix, "fc_gate"), &ConvSpec::pointwise(c, h), true);
            b.conv(&join(prefix, "fc_value"), &ConvSpec::pointwise(c, h), true);
            b.conv(&join(prefix, "fc2"), &ConvSpec::pointwise(h, c), true);
        }
        FfnKind::ChannelAggregation => {
            b.conv(&join(prefix, "fc1"), &ConvSpec::pointwise(c, h), true);
            b.conv(&join(prefix, "dw"), &ConvSpec::depthwise(h, 3), true);
            b.conv(&join(prefix, "decompose"), &ConvSpec::pointwise(h, 1), true);
            b.channel_scale(&join(prefix, "sigma"), h, 1e-5);
            b.conv(&join(prefix, "fc2"), &ConvSpec::pointwise(h, c), true);
        }
    }
}

pub fn chb_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    b.norm(&join(prefix, "norm1"), cfg.channels);
    la_specs(b, &join(prefix, "la"), cfg);
    mrfe_specs(b, &join(prefix, "mrfe"), cfg);
    gcp_specs(b, &join(prefix, "gcp"), cfg);
    b.scalar(&join(prefix, "lambda"), cfg.lambda_init);
    b.norm(&join(prefix, "norm2"), cfg.channels);
    ffn_specs(b, &join(prefix, "ffn"), cfg);
}

pub fn cofb_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig) {
    let c = cfg.channels;
    b.conv(&join(prefix, "pw_in"), &ConvSpec::pointwise(c, c), true);
    for (i, &k) in cfg.cofb_kernels.iter().enumerate() {
        b.conv(
            &join(prefix, &format!("dw{i}")),
            &ConvSpec::depthwise(c, k),
            true,
        );
    }
    b.conv(&join(prefix, "pw_mid"), &ConvSpec::pointwise(c, c), true);
    b.conv(&join(prefix, "pw_out"), &ConvSpec::pointwise(c, c), true);
}

pub fn chrg_specs(b: &mut SpecBuilder, prefix: &str, cfg: &ModelConfig, blocks: usize) {
    for j in 0..blocks {
        chb_specs(b, &join(prefix, &format!("chbs.{j}")), cfg);
    }
    cofb_specs(b, &join(prefix, "cofb"), cfg);
}

pub fn model_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = SpecBuilder::default();
    let c = cfg.channels;
    b.conv("head", &ConvSpec::same(3, c, 3, 1), true);
    for (i, &blocks) in cfg.chbs_per_group.iter().enumerate() {
        chrg_specs(&mut b, &format!("groups.{i}"), cfg, blocks);
    }
    let r = cfg.scale;
    b.conv("tail", &ConvSpec::same(c, 3 * r * r, 3, 1), true);
    b.specs
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a, so a parameter's initial value depends only on (seed, name).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// Conv weights are drawn from `N(0, INIT_GAIN / fan_in)`.
pub const INIT_GAIN: f64 = 1.0 / 3.0;

pub fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor4<f32> {
    match spec.kind {
        ParamKind::ConvWeight { fan_in } => {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &spec.name));
            Tensor4::randn(spec.shape, (INIT_GAIN / fan_in as f64).sqrt(), &mut rng)
        }
        ParamKind::Bias | ParamKind::NormBias | ParamKind::RunningMean => {
            Tensor4::zeros(spec.shape)
        }
        ParamKind::NormWeight | ParamKind::RunningVar => Tensor4::ones(spec.shape),
        ParamKind::Scalar(v) | ParamKind::ChannelScale(v) => Tensor4::full(spec.shape, v),
    }
}

/// Named learnable tensors plus non-learnable buffers (normalization statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor4<f32>>,
    pub buffers: BTreeMap<String, Tensor4<f32>>,
}

impl ParamStore {
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut store = ParamStore::default();
        for spec in specs {
            let t = init_tensor(spec, seed);
            if spec.kind.learnable() {
                store.tensors.insert(spec.name.clone(), t);
            } else {
                store.buffers.insert(spec.name.clone(), t);
            }
        }
        store
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor4<f32>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor4::numel).sum()
    }

    /// Sets every learnable tensor under `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }

    /// Checks that this store holds exactly the declared tensors with the declared shapes.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        let mut expected = 0;
        for spec in specs {
            let map = if spec.kind.learnable() {
                &self.tensors
            } else {
                &self.buffers
            };
            let t = map
                .get(&spec.name)
                .ok_or_else(|| Error::MissingParam(spec.name.clone()))?;
            if t.shape() != spec.shape {
                return Err(Error::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.dims(),
                    found: t.shape().dims(),
                });
            }
            expected += 1;
        }
        let held = self.tensors.len() + self.buffers.len();
        if held != expected {
            let declared: std::collections::HashSet<&str> =
                specs.iter().map(|s| s.name.as_str()).collect();
            let orphan = self
                .tensors
                .keys()
                .chain(self.buffers.keys())
                .find(|k| !declared.contains(k.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Config(format!("unexpected parameter `{orphan}`")));
        }
        Ok(())
    }
}

/// Full network parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config: config.clone(),
            store: ParamStore::init(&model_specs(config), seed),
        })
    }

    pub fn count(&self) -> usize {
        self.store.count()
    }
}

/// Exact number of learnable scalars, including every gate scalar and
/// normalization affine parameter.
pub fn count_params(config: &ModelConfig) -> usize {
    model_specs(config)
        .iter()
        .filter(|s| s.kind.learnable())
        .map(|s| s.shape.numel())
        .sum()
}
