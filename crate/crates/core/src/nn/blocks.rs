use super::config::{Branch, FfnKind, ModelConfig};
use super::{Bound, Mode, ModelParams, Scope};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Element, Graph, Shape4, Tensor4, Var};

type V<'g, T> = Var<'g, T>;

/// Expand, 3×3 group conv over groups of `la_group_size` channels, compress.
pub fn la_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    let c = cfg.channels;
    let hidden = cfg.la_hidden();
    let y = s.conv("expand", x, &ConvSpec::pointwise(c, hidden))?.gelu();
    let y = s.conv("group", &y, &ConvSpec::same(hidden, hidden, 3, cfg.la_groups()))?;
    s.conv("compress", &y, &ConvSpec::pointwise(hidden, c))
}

/// Channel split into branches, each with its own depthwise kernel (or none),
/// concatenated back in branch order.
pub fn mrfe_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    let parts = x.split_channels(cfg.mrfe_kernels.len())?;
    let bc = parts[0].shape().c;
    let outs = parts
        .iter()
        .zip(&cfg.mrfe_kernels)
        .enumerate()
        .map(|(i, (p, branch))| match branch {
            Branch::Identity => Ok(p.clone()),
            Branch::Depthwise(k) => s.conv(&format!("branch{i}"), p, &ConvSpec::depthwise(bc, *k)),
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat_channels(&outs)
}

/// Coarse attention map from a pooled copy of `x`, upsampled and multiplied in.
pub fn gcp_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    let att = gcp_attention(s, x, cfg)?;
    x.mul(&att)
}

pub fn gcp_attention<'g, T: Element>(
    s: &Scope<'_, '_, 'g, T>,
    x: &V<'g, T>,
    cfg: &ModelConfig,
) -> Result<V<'g, T>> {
    let sh = x.shape();
    let c = sh.c;
    let f = cfg.gcp_pool_factor;
    let pooled = x.max_pool(f, f)?;
    let a = s.conv("dw", &pooled, &ConvSpec::depthwise(c, 3))?;
    let a = s.conv("pw", &a, &ConvSpec::pointwise(c, c))?;
    a.bilinear(sh.h, sh.w)
}

pub fn ffn_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    let c = cfg.channels;
    let h = cfg.ffn_hidden();
    match cfg.ffn_kind {
        FfnKind::Plain => {
            let y = s.conv("fc1", x, &ConvSpec::pointwise(c, h))?.gelu();
            s.conv("fc2", &y, &ConvSpec::pointwise(h, c))
        }
        FfnKind::Gate => {
            let gate = s.conv("fc_gate", x, &ConvSpec::pointwise(c, h))?.gelu();
            let value = s.conv("fc_value", x, &ConvSpec::pointwise(c, h))?;
            s.conv("fc2", &gate.mul(&value)?, &ConvSpec::pointwise(h, c))
        }
        FfnKind::ChannelAggregation => {
            let y = s.conv("fc1", x, &ConvSpec::pointwise(c, h))?;
            let y = s.conv("dw", &y, &ConvSpec::depthwise(h, 3))?.gelu();
            let y = channel_aggregate(s, &y, h)?;
            s.conv("fc2", &y, &ConvSpec::pointwise(h, c))
        }
    }
}

/// `y + sigma * (y - GELU(decompose(y)))`, where `decompose` squeezes all
/// channels into one map that is broadcast back over the channels.
fn channel_aggregate<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, y: &V<'g, T>, h: usize) -> Result<V<'g, T>> {
    let g = s.graph();
    let squeezed = s.conv("decompose", y, &ConvSpec::pointwise(h, 1))?.gelu();
    let ones = g.constant(Tensor4::ones(Shape4::new(h, 1, 1, 1)));
    let broadcast = squeezed.conv2d(&ones, None, &ConvSpec::pointwise(1, h))?;
    let sigma = s.param("sigma")?;
    let scaled = y
        .sub(&broadcast)?
        .conv2d(&sigma, None, &ConvSpec::depthwise(h, 1))?;
    y.add(&scaled)
}

pub fn chb_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    let y = s.batch_norm("norm1", x)?;
    let y = la_forward(&s.child("la"), &y, cfg)?;
    let local = mrfe_forward(&s.child("mrfe"), &y, cfg)?;
    let global = gcp_forward(&s.child("gcp"), &y, cfg)?;
    let lambda = s.param("lambda")?;
    let y = local.add(&global.scale_by(&lambda)?)?;
    let y = s.batch_norm("norm2", &y)?;
    ffn_forward(&s.child("ffn"), &y, cfg)?.add(x)
}

/// Intermediate values of the cascade block, exposed for analysis.
pub struct CofbParts<'g, T: Element = f32> {
    /// activated input projection
    pub hat: V<'g, T>,
    /// projected output of the depthwise cascade
    pub bar: V<'g, T>,
    pub out: V<'g, T>,
}

pub fn cofb_parts<'g, T: Element>(
    s: &Scope<'_, '_, 'g, T>,
    x: &V<'g, T>,
    cfg: &ModelConfig,
) -> Result<CofbParts<'g, T>> {
    let c = cfg.channels;
    let hat = s.conv("pw_in", x, &ConvSpec::pointwise(c, c))?.gelu();
    let mut y = hat.clone();
    for (i, &k) in cfg.cofb_kernels.iter().enumerate() {
        y = s.conv(&format!("dw{i}"), &y, &ConvSpec::depthwise(c, k))?;
    }
    let bar = s.conv("pw_mid", &y, &ConvSpec::pointwise(c, c))?;
    let out = s.conv("pw_out", &bar.mul(&hat)?, &ConvSpec::pointwise(c, c))?;
    Ok(CofbParts { hat, bar, out })
}

pub fn cofb_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, x: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    Ok(cofb_parts(s, x, cfg)?.out)
}

pub fn chrg_forward<'g, T: Element>(
    s: &Scope<'_, '_, 'g, T>,
    x: &V<'g, T>,
    cfg: &ModelConfig,
    blocks: usize,
) -> Result<V<'g, T>> {
    let mut y = x.clone();
    for j in 0..blocks {
        y = chb_forward(&s.child(&format!("chbs.{j}")), &y, cfg)?;
    }
    cofb_forward(&s.child("cofb"), &y, cfg)?.add(x)
}

pub fn echosr_forward<'g, T: Element>(s: &Scope<'_, '_, 'g, T>, lr: &V<'g, T>, cfg: &ModelConfig) -> Result<V<'g, T>> {
    cfg.validate()?;
    let sh = lr.shape();
    if sh.c != 3 {
        return Err(Error::Shape {
            op: "echosr_forward",
            dim: "input channels",
            expected: 3,
            actual: sh.c,
        });
    }
    let c = cfg.channels;
    let shallow = s.conv("head", lr, &ConvSpec::same(3, c, 3, 1))?;
    let mut y = shallow.clone();
    for (i, &blocks) in cfg.chbs_per_group.iter().enumerate() {
        y = chrg_forward(&s.child(&format!("groups.{i}")), &y, cfg, blocks)?;
    }
    let y = y.add(&shallow)?;
    let r = cfg.scale;
    s.conv("tail", &y, &ConvSpec::same(c, 3 * r * r, 3, 1))?
        .pixel_shuffle(r)
}

/// Eval-mode forward pass without recording a graph.
pub fn infer(params: &ModelParams, lr: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let g = Graph::<f32>::no_grad();
    let bound = Bound::new(&g, &params.store, Mode::Eval, false);
    let x = g.constant(lr.clone());
    let y = echosr_forward(&bound.root(), &x, &params.config)?;
    Ok(y.value().clone())
}
