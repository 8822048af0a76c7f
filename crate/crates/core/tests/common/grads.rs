//! The finite-difference gradient suite, grouped by operation family.
//! Every check runs in 64-bit at 8x8 scale or smaller, except the end-to-end
//! parameter checks, which need the smallest frame both pathways admit.

use adafnio_core::adacof::{blend_warps, AdaCofConfig, AdaCofField, AdaCofFields};
use adafnio_core::gradcheck::{check_inputs, check_params, GradCheck};
use adafnio_core::model::{AdaFnio, ModelConfig, Pathway};
use adafnio_core::nio::NioConfig;
use adafnio_core::ops::ResampleMode;
use adafnio_core::spectral::{fno_layer, SpectralModes};
use adafnio_core::train::{combined_loss, l1_loss, l2_loss, IdentityFeatures, RandomConvFeatures};
use adafnio_core::{ParamId, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-5;

pub type Checks = Vec<(String, GradCheck)>;

pub fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink there.
pub fn rand_away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Offsets whose fractional part stays in [0.15, 0.85], so the stencil never
/// crosses a bilinear cell edge.
pub fn fractional_offsets(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-2i32..2) as f64 + rng.gen_range(0.15..0.85))
}

fn check<F>(name: impl Into<String>, inputs: &[Tensor<f64>], f: F) -> (String, GradCheck)
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let name = name.into();
    let r = check_inputs(inputs, STEP, f).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name, r)
}

/// Panics with every failing entry of `checks`.
pub fn assert_all(checks: Checks) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|(_, r)| !r.passes(TOL))
        .map(|(n, r)| {
            format!("{n}: max rel err {:e} at {:?}, analytic/numeric {:?}", r.max_rel_err, r.worst, r.worst_values)
        })
        .collect();
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

pub fn elementwise() -> Checks {
    let a = rand_t(&[2, 3, 4, 4], 1);
    let b = rand_t(&[2, 3, 4, 4], 2);
    vec![
        check("add", &[a.clone(), b.clone()], |v| v[0].add(v[1])),
        check("sub", &[a.clone(), b.clone()], |v| v[0].sub(v[1])),
        check("mul", &[a.clone(), b], |v| v[0].mul(v[1])),
        check("scale", std::slice::from_ref(&a), |v| Ok(v[0].scale(-1.7))),
        check("add_scalar", std::slice::from_ref(&a), |v| Ok(v[0].add_scalar(0.3))),
        check("mul_scalar", &[a.clone(), rand_t(&[1], 3)], |v| v[0].mul_scalar(v[1])),
        check("bias_add", &[a.clone(), rand_t(&[3], 4)], |v| v[0].bias_add(v[1])),
        check("square", std::slice::from_ref(&a), |v| Ok(v[0].square())),
        check("abs", &[rand_away_from_zero(&[2, 3, 4, 4], 5)], |v| Ok(v[0].abs())),
        check("mean", std::slice::from_ref(&a), |v| Ok(v[0].mean())),
        check("sum", &[a], |v| Ok(v[0].sum())),
    ]
}

pub fn activations() -> Checks {
    let x = rand_t(&[1, 4, 4, 4], 6).scale(3.0);
    vec![
        check("gelu", std::slice::from_ref(&x), |v| Ok(v[0].gelu())),
        check("sigmoid", std::slice::from_ref(&x), |v| Ok(v[0].sigmoid())),
        check("softmax", &[x], |v| v[0].softmax_channels()),
        check("relu", &[rand_away_from_zero(&[1, 2, 4, 4], 7)], |v| Ok(v[0].relu())),
    ]
}

pub fn conv2d() -> Checks {
    [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5), (1, 0, 3)]
        .into_iter()
        .map(|(stride, pad, k)| {
            let x = rand_t(&[2, 3, 8, 7], 10 + stride as u64);
            let w = rand_t(&[4, 3, k, k], 20 + k as u64);
            let b = rand_t(&[4], 30);
            check(format!("conv2d s{stride} p{pad} k{k}"), &[x, w, b], move |v| {
                v[0].conv2d(v[1], Some(v[2]), stride, pad)
            })
        })
        .collect()
}

pub fn plumbing() -> Checks {
    let x = rand_t(&[1, 2, 4, 4], 40);
    vec![
        check("nearest_up", std::slice::from_ref(&x), |v| v[0].resample(2, ResampleMode::NearestUp)),
        check("avg_down", &[rand_t(&[1, 2, 8, 8], 41)], |v| v[0].resample(2, ResampleMode::AvgDown)),
        check("concat", &[x.clone(), rand_t(&[1, 3, 4, 4], 42)], |v| Var::concat_channels(&[v[0], v[1]])),
        check("slice", &[rand_t(&[2, 5, 3, 3], 43)], |v| v[0].slice_channels(1, 3)),
        check("reshape", &[x], |v| v[0].reshape(&[2, 16])),
    ]
}

/// Even and odd widths exercise the Nyquist column and its absence.
pub fn spectral_conv() -> Checks {
    [(8, 8, 4, 4), (8, 8, 2, 3), (7, 5, 2, 2), (6, 8, 3, 1)]
        .into_iter()
        .map(|(h, w, m1, m2)| {
            let modes = SpectralModes::new(m1, m2);
            let shape = modes.weight_shape(2, 3);
            let x = rand_t(&[2, 2, h, w], 50 + h as u64);
            let re = rand_t(&shape, 60);
            let im = rand_t(&shape, 61);
            check(format!("spectral_conv {h}x{w} modes ({m1},{m2})"), &[x, re, im], move |v| {
                v[0].spectral_conv(v[1], v[2], modes)
            })
        })
        .collect()
}

pub fn fno() -> Checks {
    let modes = SpectralModes::new(3, 3);
    let inputs = [
        rand_t(&[1, 2, 8, 8], 70),
        rand_t(&modes.weight_shape(2, 2), 71),
        rand_t(&modes.weight_shape(2, 2), 72),
        rand_t(&[2, 2, 1, 1], 73),
        rand_t(&[2], 74),
    ];
    vec![check("fno_layer", &inputs, move |v| fno_layer(v[0], v[1], v[2], modes, v[3], v[4]))]
}

pub fn adacof_warp() -> Checks {
    [(3, 1), (3, 2), (5, 1)]
        .into_iter()
        .map(|(k, d)| {
            let taps = k * k;
            let inputs = [
                rand_t(&[2, 2, 6, 5], 90),
                rand_t(&[2, taps, 6, 5], 91),
                fractional_offsets(&[2, taps, 6, 5], 92),
                fractional_offsets(&[2, taps, 6, 5], 93),
            ];
            check(format!("adacof_warp k{k} d{d}"), &inputs, move |v| v[0].adacof_warp(v[1], v[2], v[3], k, d))
        })
        .collect()
}

pub fn occlusion_blend() -> Checks {
    let (k, taps) = (3, 9);
    let inputs = [
        rand_t(&[1, 2, 5, 6], 100),
        rand_t(&[1, 2, 5, 6], 101),
        rand_t(&[1, taps, 5, 6], 102),
        fractional_offsets(&[1, taps, 5, 6], 103),
        fractional_offsets(&[1, taps, 5, 6], 104),
        rand_t(&[1, taps, 5, 6], 105),
        fractional_offsets(&[1, taps, 5, 6], 106),
        fractional_offsets(&[1, taps, 5, 6], 107),
        rand_t(&[1, 1, 5, 6], 108),
    ];
    vec![check("blend_warps", &inputs, move |v| {
        let f = AdaCofFields {
            frame0: AdaCofField { weights: v[2], alpha: v[3], beta: v[4] },
            frame1: AdaCofField { weights: v[5], alpha: v[6], beta: v[7] },
            occlusion: v[8],
        };
        blend_warps(v[0], v[1], &f, k, 1)
    })]
}

pub fn losses() -> Checks {
    let p = rand_t(&[2, 1, 6, 6], 110);
    let t = p.zip_map(&rand_away_from_zero(&[2, 1, 6, 6], 111), |a, b| a + b);
    // Random features put kinks at unpredictable places; a smooth target
    // offset keeps every feature difference away from zero.
    let feat = RandomConvFeatures::new(1, &[2], 7);
    let offset = p.map(|a| a + 0.5);
    vec![
        check("l1", &[p.clone(), t.clone()], |v| l1_loss(v[0], v[1])),
        check("l2", &[p.clone(), t.clone()], |v| l2_loss(v[0], v[1])),
        check("combined", &[p.clone(), offset], move |v| combined_loss(v[0], v[1], Some(&feat))),
        check("combined identity", &[p, t], |v| combined_loss(v[0], v[1], Some(&IdentityFeatures))),
    ]
}

pub fn tiny_model(pathway: Pathway) -> ModelConfig {
    ModelConfig {
        channels: 1,
        pathway,
        nio: NioConfig {
            base_resolution: 32,
            lifting_channels: 2,
            level_channels: [2, 2, 2, 2],
            level_modes: [
                SpectralModes::new(3, 3),
                SpectralModes::new(2, 2),
                SpectralModes::new(2, 1),
                SpectralModes::new(1, 1),
            ],
            ..NioConfig::default()
        },
        adacof: AdaCofConfig { kernel_size: 3, width: 4, head_width: 2, ..AdaCofConfig::default() },
        ..ModelConfig::default()
    }
}

/// A few coordinates from every NIO and blend parameter, checked through the
/// whole model on 32x32 frames. AdaCoF internals sit behind ReLUs and
/// bilinear cell edges, where a finite difference straddles a kink; their
/// ops are checked individually.
pub fn model_params(pathway: Pathway) -> Checks {
    let config = tiny_model(pathway);
    let (model, mut store) = AdaFnio::init::<f64>(&config, 5).unwrap();
    // Default init leaves the deepest levels with ~1e-12 gradients, below the
    // stencil's resolution. Any parameter point is a valid place to check.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for p in store.iter_mut().filter(|p| !p.name.starts_with("adacof.")) {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.6..0.6));
    }
    let frame = |seed| rand_t(&[1, 1, 32, 32], seed).map(|v| 0.5 + 0.4 * v);
    let (i0, i1, mid) = (frame(120), frame(121), frame(122));
    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, p)| !p.name.starts_with("adacof."))
        .flat_map(|(id, p)| {
            let n = p.value.len();
            [0, n / 3, n / 2, n - 1].into_iter().map(move |i| (id, i))
        })
        .collect();
    let r = check_params(&store, &coords, STEP, |ctx| {
        let t = ctx.tape;
        let y = model.forward(ctx, t.constant(i0.clone()), t.constant(i1.clone()))?;
        l2_loss(y, t.constant(mid.clone()))
    })
    .unwrap();
    let name = &store.iter().nth(r.worst.0).unwrap().1.name;
    vec![(format!("{pathway:?} model parameters (worst at {name})"), r)]
}

/// Every family above.
pub fn suite() -> Checks {
    [
        elementwise(),
        activations(),
        conv2d(),
        plumbing(),
        spectral_conv(),
        fno(),
        adacof_warp(),
        occlusion_blend(),
        losses(),
        model_params(Pathway::Nio),
        model_params(Pathway::Both),
    ]
    .concat()
}
