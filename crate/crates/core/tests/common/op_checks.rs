//! Finite-difference checks for every differentiable tensor operation.

use echosr::{ConvSpec, Element, Shape4, Tensor4, Var};

use super::{gradcheck, randn, spaced, CheckReport};

const MAX_ELEMS: usize = 48;

fn conv_case<T: Element>(seed: u64, h: f64, spec: ConvSpec, hw: (usize, usize), bias: bool) -> CheckReport {
    let x: Tensor4<T> = randn(Shape4::new(2, spec.in_channels, hw.0, hw.1), seed);
    let w: Tensor4<T> = Tensor4::randn(spec.weight_shape(), 0.5, &mut super::rng(seed + 1));
    let mut inputs = vec![(x, true), (w, true)];
    if bias {
        inputs.push((randn(Shape4::new(1, spec.out_channels, 1, 1), seed + 2), true));
    }
    gradcheck(
        &inputs,
        move |_, v: &[Var<'_, T>]| v[0].conv2d(&v[1], v.get(2), &spec),
        h,
        MAX_ELEMS,
        seed,
    )
    .expect("conv gradcheck")
}

/// Runs every op check for one seed and returns `(op name, report)` pairs.
pub fn all<T: Element>(seed: u64, h: f64) -> Vec<(&'static str, CheckReport)> {
    let mut out = Vec::new();
    let s = |n, c, hh, w| Shape4::new(n, c, hh, w);

    out.push(("conv2d", conv_case::<T>(seed, h, ConvSpec::same(3, 4, 3, 1), (6, 5), true)));
    out.push((
        "conv2d strided dilated",
        conv_case::<T>(
            seed,
            h,
            ConvSpec {
                in_channels: 4,
                out_channels: 2,
                kernel: (3, 3),
                stride: 2,
                dilation: 2,
                groups: 2,
                padding: 1,
            },
            (9, 8),
            true,
        ),
    ));
    out.push(("pointwise_conv", conv_case::<T>(seed, h, ConvSpec::pointwise(5, 3), (4, 4), true)));
    out.push(("depthwise_conv", conv_case::<T>(seed, h, ConvSpec::depthwise(3, 5), (7, 6), true)));
    out.push(("group_conv", conv_case::<T>(seed, h, ConvSpec::same(12, 12, 3, 2), (5, 5), true)));

    let bn_inputs = vec![
        (randn::<T>(s(2, 3, 4, 3), seed), true),
        (Tensor4::rand_uniform(s(1, 3, 1, 1), 0.5, 1.5, &mut super::rng(seed + 3)), true),
        (randn::<T>(s(1, 3, 1, 1), seed + 4), true),
    ];
    out.push((
        "batch_norm train",
        gradcheck(
            &bn_inputs,
            |_, v: &[Var<'_, T>]| Ok(v[0].batch_norm(&v[1], &v[2], None)?.0),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    let mean = [T::from_f64_lossy(0.1), T::from_f64_lossy(-0.2), T::from_f64_lossy(0.3)];
    let var = [T::from_f64_lossy(0.9), T::from_f64_lossy(1.4), T::from_f64_lossy(0.6)];
    out.push((
        "batch_norm eval",
        gradcheck(
            &bn_inputs,
            move |_, v: &[Var<'_, T>]| Ok(v[0].batch_norm(&v[1], &v[2], Some((&mean, &var)))?.0),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));

    out.push((
        "max_pool",
        gradcheck(
            &[(spaced::<T>(s(1, 2, 11, 9), 0.05, seed), true)],
            |_, v: &[Var<'_, T>]| v[0].max_pool(8, 8),
            h.min(1e-2),
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "bilinear up",
        gradcheck(
            &[(randn::<T>(s(1, 2, 3, 4), seed), true)],
            |_, v: &[Var<'_, T>]| v[0].bilinear(8, 7),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "bilinear down",
        gradcheck(
            &[(randn::<T>(s(1, 2, 9, 8), seed), true)],
            |_, v: &[Var<'_, T>]| v[0].bilinear(4, 3),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "pixel_shuffle",
        gradcheck(
            &[(randn::<T>(s(1, 8, 3, 2), seed), true)],
            |_, v: &[Var<'_, T>]| v[0].pixel_shuffle(2),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "split/concat",
        gradcheck(
            &[(randn::<T>(s(2, 8, 3, 3), seed), true)],
            |_, v: &[Var<'_, T>]| {
                let mut parts = v[0].split_channels(4)?;
                parts.reverse();
                let scaled: Vec<_> = parts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.scale(T::from_f64_lossy(i as f64 + 1.0)))
                    .collect();
                Var::concat_channels(&scaled)
            },
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    let pair = vec![
        (randn::<T>(s(1, 2, 3, 3), seed), true),
        (randn::<T>(s(1, 2, 3, 3), seed + 5), true),
    ];
    out.push((
        "ew_add",
        gradcheck(&pair, |_, v: &[Var<'_, T>]| v[0].add(&v[1]), h, MAX_ELEMS, seed).unwrap(),
    ));
    out.push((
        "ew_sub",
        gradcheck(&pair, |_, v: &[Var<'_, T>]| v[0].sub(&v[1]), h, MAX_ELEMS, seed).unwrap(),
    ));
    out.push((
        "ew_mul",
        gradcheck(&pair, |_, v: &[Var<'_, T>]| v[0].mul(&v[1]), h, MAX_ELEMS, seed).unwrap(),
    ));
    out.push((
        "scalar_scale (learnable)",
        gradcheck(
            &[
                (randn::<T>(s(1, 2, 3, 3), seed), true),
                (Tensor4::scalar(T::from_f64_lossy(0.1)), true),
            ],
            |_, v: &[Var<'_, T>]| v[0].scale_by(&v[1]),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "activation",
        gradcheck(
            &[(randn::<T>(s(1, 3, 4, 4), seed), true)],
            |_, v: &[Var<'_, T>]| Ok(v[0].gelu()),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "abs",
        gradcheck(
            &[(spaced::<T>(s(1, 2, 3, 3), 0.5, seed), true)],
            |_, v: &[Var<'_, T>]| Ok(v[0].abs()),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "mean",
        gradcheck(
            &[(randn::<T>(s(2, 2, 3, 3), seed), true)],
            |_, v: &[Var<'_, T>]| Ok(v[0].mean()),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "dft2 (radix-2)",
        gradcheck(
            &[(randn::<T>(s(1, 2, 4, 8), seed), true)],
            |_, v: &[Var<'_, T>]| v[0].dft2_packed(),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out.push((
        "dft2 (direct)",
        gradcheck(
            &[(randn::<T>(s(1, 1, 3, 6), seed), true)],
            |_, v: &[Var<'_, T>]| v[0].dft2_packed(),
            h,
            MAX_ELEMS,
            seed,
        )
        .unwrap(),
    ));
    out
}
