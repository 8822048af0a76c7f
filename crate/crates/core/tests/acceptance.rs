//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 4, 5, 6 and 9 share a single training run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adafnio_core::adacof::{blend_warps, AdaCofConfig, AdaCofField, AdaCofFields, AdaCofNet};
use adafnio_core::checkpoint::CheckpointFile;
use adafnio_core::data::{gen_sequences, gen_synthetic, texture, Sequence, SyntheticSpec, Triplet};
use adafnio_core::eval::{drop_k_scores, evaluate, Scores};
use adafnio_core::metrics::{psnr, ssim};
use adafnio_core::model::{AdaFnio, BlendWeights, ModelConfig, Pathway};
use adafnio_core::nio::NioConfig;
use adafnio_core::nn::Ctx;
use adafnio_core::spectral::{fft2, ifft2, SpectralModes, SpectralWeights};
use adafnio_core::train::{load_model, EpochRecord, TrainConfig, Trainer};
use adafnio_core::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    circular_conv, grads, naive_dft, random_tensor, ssim_direct, trig_upsample, weights_from_kernel, BandLimited,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn c1_fft() -> Outcome {
    let start = Instant::now();
    let (mut dft, mut round, mut parseval) = (0.0f64, 0.0f64, 0.0f64);
    for (h, w, seed) in [(8, 8, 1), (13, 7, 2)] {
        let x = random_tensor(&[1, h, w], seed);
        let s = fft2(&x).unwrap();
        let oracle = naive_dft(x.data(), h, w, false);
        let scale = oracle.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for k1 in 0..h {
            for k2 in 0..=w / 2 {
                dft = dft.max((s.get(0, k1, k2) - oracle[k1 * w + k2]).norm() / scale);
            }
        }
        round = round.max(ifft2(&s).max_abs_diff(&x));
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = s.to_full().iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
        parseval = parseval.max((energy - spectral).abs() / energy);
    }
    let t = start.elapsed();
    outcome(
        dft <= 1e-10 && round <= 1e-10 && parseval <= 1e-10 && within(Duration::from_secs(1), t),
        format!("dft rel {dft:.1e}, roundtrip {round:.1e}, parseval rel {parseval:.1e}, {t:.2?}"),
    )
}

fn c2_spectral_conv() -> Outcome {
    let start = Instant::now();
    let (h, w) = (8, 8);
    let x = random_tensor(&[1, h, w], 21);
    let kernel = random_tensor(&[1, h, w], 22);
    let oracle = circular_conv(x.data(), kernel.data(), h, w);
    let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let weights = weights_from_kernel(&kernel, h, w);
    let err = |y: Vec<f64>| y.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let e64 = err(weights.apply(&x).unwrap().into_data());
    let w32 = SpectralWeights::new(weights.modes, weights.re.cast::<f32>(), weights.im.cast::<f32>()).unwrap();
    let e32 = err(w32.apply(&x.cast::<f32>()).unwrap().cast::<f64>().into_data());
    let t = start.elapsed();
    outcome(
        e64 <= 1e-10 && e32 <= 1e-6 && within(Duration::from_secs(1), t),
        format!("rel err 64-bit {e64:.1e}, 32-bit {e32:.1e}, {t:.2?}"),
    )
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let checks = grads::suite();
    let t = start.elapsed();
    let worst = checks.iter().max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err)).expect("nonempty suite");
    let failed: Vec<&str> = checks.iter().filter(|(_, r)| !r.passes(grads::TOL)).map(|(n, _)| n.as_str()).collect();
    outcome(
        failed.is_empty() && within(Duration::from_secs(30), t),
        format!(
            "{} checks, worst rel err {:.1e} ({}), failed {failed:?}, {t:.2?}",
            checks.len(),
            worst.1.max_rel_err,
            worst.0
        ),
    )
}

/// The trained NIO model and what criteria 4, 6 and 9 need from its run.
struct Trained {
    model: AdaFnio,
    store: ParamStore<f32>,
    log: Vec<EpochRecord>,
    after_first: Vec<u8>,
    final_ckpt: CheckpointFile,
    train: Vec<Triplet<f32>>,
    val: Vec<Triplet<f32>>,
    config: TrainConfig,
    elapsed: Duration,
}

fn learning_config() -> (SyntheticSpec, ModelConfig, TrainConfig) {
    let spec = SyntheticSpec { seed: 7, count: 2200, resolution: 32, channels: 1, ..SyntheticSpec::default() };
    let model = ModelConfig {
        channels: 1,
        pathway: Pathway::Nio,
        nio: NioConfig { base_resolution: 32, ..NioConfig::default() },
        ..ModelConfig::default()
    };
    (spec, model, TrainConfig::default())
}

fn train_nio() -> Trained {
    let (spec, model_config, config) = learning_config();
    let all: Vec<Triplet<f32>> = gen_synthetic(&spec).unwrap().iter().map(Triplet::cast).collect();
    let (train, val) = all.split_at(2000);
    let start = Instant::now();
    let mut trainer = Trainer::new(&model_config, config.clone(), 0).unwrap();
    let mut after_first = Vec::new();
    let log = trainer
        .fit(train, val, |t, r| {
            println!(
                "  epoch {}: loss {:.5}, val psnr {:.3}, ssim {:.4}",
                r.epoch,
                r.train_loss,
                r.val_psnr.unwrap(),
                r.val_ssim.unwrap()
            );
            if r.epoch == 1 {
                after_first = t.to_checkpoint().to_bytes()?;
            }
            Ok(())
        })
        .unwrap();
    let elapsed = start.elapsed();
    let final_ckpt = trainer.to_checkpoint();
    Trained {
        model: trainer.model,
        store: trainer.store,
        log,
        after_first,
        final_ckpt,
        train: train.to_vec(),
        val: val.to_vec(),
        config,
        elapsed,
    }
}

fn c5_learning(run: &Trained) -> Outcome {
    let best = run.log.iter().filter_map(|r| r.val_ssim).fold(f64::NEG_INFINITY, f64::max);
    let trace: Vec<String> = run.log.iter().map(|r| format!("{:.4}", r.val_ssim.unwrap())).collect();
    outcome(
        run.log.len() == 3 && best >= 0.85 && within(Duration::from_secs(20 * 60), run.elapsed),
        format!("val ssim by epoch [{}], best {best:.4}, {:.1?}", trace.join(", "), run.elapsed),
    )
}

/// Held-out textures sampled on an `res x res` grid of the same torus.
fn transfer_set(res: usize) -> Vec<Triplet<f32>> {
    let spec = SyntheticSpec { seed: 99, count: 100, resolution: 32, channels: 1, ..SyntheticSpec::default() };
    (0..spec.count)
        .map(|i| {
            let tex = texture(&spec, i);
            let f = |t| tex.frame_at(t, res, res).unwrap().cast::<f32>();
            Triplet::new(format!("t{i:03}"), f(-1.0), f(0.0), f(1.0)).unwrap()
        })
        .collect()
}

fn c4_resolution(run: &Trained) -> Outcome {
    let start = Instant::now();
    let Scores { ssim: s1, .. } = evaluate(&run.model, &run.store, &transfer_set(32), 1).unwrap();
    let Scores { ssim: s2, .. } = evaluate(&run.model, &run.store, &transfer_set(64), 1).unwrap();

    let modes = SpectralModes::new(4, 4);
    let weights = SpectralWeights::<f64>::random(modes, 2, 2, &mut ChaCha8Rng::seed_from_u64(31));
    let field = BandLimited::random(4, 4, 32);
    let y_base = weights.apply(&field.sample(2, 16, 16)).unwrap();
    let mut equiv = 0.0f64;
    for (h, w) in [(32, 32), (64, 48)] {
        let y = weights.apply_at_resolution(&field.sample(2, h, w)).unwrap();
        for c in 0..2 {
            let oracle = trig_upsample(&y_base.data()[c * 256..(c + 1) * 256], 16, 16, h, w);
            let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in y.data()[c * h * w..(c + 1) * h * w].iter().zip(&oracle) {
                equiv = equiv.max((a - b).abs() / scale);
            }
        }
    }
    let t = start.elapsed();
    let drop = s1 - s2;
    outcome(
        drop <= 0.05 && equiv <= 1e-6 && within(Duration::from_secs(120), t),
        format!("nio ssim 1x {s1:.4}, 2x {s2:.4} (drop {drop:.4}), spectral equivariance rel {equiv:.1e}, {t:.2?}"),
    )
}

fn c6_drop_schedule(run: &Trained) -> Outcome {
    let spec = SyntheticSpec { seed: 99, count: 100, resolution: 32, channels: 1, ..SyntheticSpec::default() };
    let seqs: Vec<Sequence<f32>> = gen_sequences(&spec, 9).unwrap().iter().map(Sequence::cast).collect();
    let s: Vec<f64> =
        [1, 2, 4].iter().map(|&k| drop_k_scores(&run.model, &run.store, &seqs, k).unwrap().ssim).collect();
    outcome(s[0] > s[1] && s[1] > s[2], format!("ssim drop1 {:.4} > drop2 {:.4} > drop4 {:.4}", s[0], s[1], s[2]))
}

fn c7_blend() -> Outcome {
    let config = ModelConfig {
        channels: 3,
        nio: NioConfig {
            base_resolution: 32,
            lifting_channels: 4,
            level_channels: [4, 6, 6, 8],
            level_modes: [
                SpectralModes::new(4, 4),
                SpectralModes::new(3, 3),
                SpectralModes::new(2, 2),
                SpectralModes::new(1, 1),
            ],
            ..NioConfig::default()
        },
        adacof: AdaCofConfig { kernel_size: 3, width: 8, head_width: 4, ..AdaCofConfig::default() },
        ..ModelConfig::default()
    };
    let (model, store) = AdaFnio::init::<f32>(&config, 1).unwrap();
    let frame = |s| random_tensor(&[1, 3, 32, 32], s).map(|v| 0.5 + 0.5 * v).cast::<f32>();
    let (a, b) = (frame(2), frame(3));
    let with = |w1: f32, w2: f32| {
        let mut s = store.clone();
        *s.value_mut(model.w1.unwrap()) = Tensor::scalar(w1);
        *s.value_mut(model.w2.unwrap()) = Tensor::scalar(w2);
        model.predict(&s, &a, &b).unwrap()
    };
    let (y10, y01) = (with(1.0, 0.0), with(0.0, 1.0));
    let default = BlendWeights::default();
    let mut err = 0.0f32;
    for (w1, w2) in [(default.w1 as f32, default.w2 as f32), (0.3, -0.7), (1.5, 0.25)] {
        let oracle = y10.zip_map(&y01, |p, q| w1 * p + w2 * q);
        err = err.max(with(w1, w2).max_abs_diff(&oracle));
    }
    let init = (store.value(model.w1.unwrap()).item(), store.value(model.w2.unwrap()).item());
    err = err.max(model.predict(&store, &a, &b).unwrap().max_abs_diff(&y10.zip_map(&y01, |p, q| 0.01 * p + q)));
    outcome(
        err <= 1e-6 && default.w1 == 0.01 && init == (0.01, 1.0),
        format!("max err {err:.1e}, default (w1, w2) = ({}, {})", init.0, init.1),
    )
}

fn c8_adacof() -> Outcome {
    let (h, w) = (32, 32);
    let unit = |s, c| random_tensor(&[1, c, h, w], s).map(|v| 0.5 + 0.5 * v);

    let tape = Tape::<f64>::new();
    let identity = |taps: usize| {
        let wts = Tensor::from_fn(&[1, taps, h, w], |i| if i / (h * w) == taps / 2 { 1.0 } else { 0.0 });
        let zero = tape.constant(Tensor::zeros(&[1, taps, h, w]));
        AdaCofField { weights: tape.constant(wts), alpha: zero, beta: zero }
    };
    let img = unit(5, 3);
    let i = tape.constant(img.clone());
    let fields = AdaCofFields { frame0: identity(25), frame1: identity(25), occlusion: tape.constant(unit(6, 1)) };
    let y = blend_warps(i, i, &fields, 5, 1).unwrap();
    let warp_only = i.adacof_warp(fields.frame0.weights, fields.frame0.alpha, fields.frame0.beta, 5, 1).unwrap();
    let id_err = y.value().max_abs_diff(&img).max(warp_only.value().max_abs_diff(&img));

    let config = AdaCofConfig { kernel_size: 3, width: 8, head_width: 4, ..AdaCofConfig::default() };
    let (mut outside, mut outside_in_bounds, mut worst) = (0usize, 0usize, 0.0f64);
    for seed in 0..100u64 {
        let mut store = ParamStore::<f64>::new();
        let net = AdaCofNet::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), "adacof", &config, 1).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let (a, b) = (unit(1000 + seed, 1), unit(2000 + seed, 1));
        let (lo, hi) = (a.min().min(b.min()), a.max().max(b.max()));
        let (ia, ib) = (tape.constant(a), tape.constant(b));
        let f = net.fields(ctx, ia, ib).unwrap();
        let y = net.synthesize(ia, ib, &f).unwrap();
        for (p, &v) in y.value().data().iter().enumerate() {
            let excess = (lo - v).max(v - hi);
            if excess > 1e-12 {
                outside += 1;
                worst = worst.max(excess);
                if in_bounds(&f.frame0, 3, h, w, p) && in_bounds(&f.frame1, 3, h, w, p) {
                    outside_in_bounds += 1;
                }
            }
        }
    }
    outcome(
        id_err == 0.0 && outside == 0,
        format!(
            "identity err {id_err:e}; over 100 seeds {outside} pixels outside [min, max] (worst by {worst:.1e}), {outside_in_bounds} of them with every tap in bounds"
        ),
    )
}

/// Whether every tap of pixel `p` samples inside the frame.
fn in_bounds(field: &AdaCofField<'_, f64>, k: usize, h: usize, w: usize, p: usize) -> bool {
    let (al, be) = (field.alpha.value(), field.beta.value());
    let r = (k / 2) as f64;
    let (y, x) = ((p / w) as f64, (p % w) as f64);
    (0..k * k).all(|t| {
        let sy = y + (t / k) as f64 - r + al.data()[t * h * w + p];
        let sx = x + (t % k) as f64 - r + be.data()[t * h * w + p];
        (0.0..=(h - 1) as f64).contains(&sy) && (0.0..=(w - 1) as f64).contains(&sx)
    })
}

fn c9_checkpoint(run: &Trained) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    run.final_ckpt.save(&a).unwrap();
    CheckpointFile::load(&a).unwrap().save(&b).unwrap();
    let identical = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let (model, store) = load_model(&CheckpointFile::load(&b).unwrap()).unwrap();
    let same_params = store.iter().zip(run.store.iter()).all(|((_, p), (_, q))| p.value == q.value);
    let same_model = model.config == run.model.config;

    let ckpt = CheckpointFile::from_bytes(&run.after_first).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ckpt, run.config.clone()).unwrap();
    let mut log = run.log[..1].to_vec();
    log.extend(resumed.fit(&run.train, &run.val, |_, _| Ok(())).unwrap());
    let same_log = log == run.log;
    let same_end = resumed.to_checkpoint().to_bytes().unwrap() == run.final_ckpt.to_bytes().unwrap();
    outcome(
        identical && same_params && same_model && same_log && same_end,
        format!(
            "save/load/save identical {identical}, reloaded params equal {same_params}, resumed log equal {same_log} ({} epochs), resumed state identical {same_end}",
            log.len()
        ),
    )
}

fn c10_metrics() -> Outcome {
    let mut ssim_err = 0.0f64;
    for (shape, s) in [([1, 16, 16], 1), ([3, 16, 16], 3), ([1, 13, 21], 5)] {
        let a = random_tensor(&shape, s).map(|v| 0.5 + 0.4 * v);
        let noise = random_tensor(&shape, s + 1);
        let b = a.zip_map(&noise, |p, q| 0.8 * p + 0.1 * q + 0.05);
        ssim_err = ssim_err.max((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs());
    }
    let z = Tensor::<f64>::zeros(&[1, 8, 8]);
    let tenth = Tensor::<f64>::from_fn(&[1, 8, 8], |i| if i % 2 == 0 { 0.1 } else { -0.1 });
    let one = Tensor::<f64>::from_fn(&[1, 8, 8], |i| if i % 3 == 0 { 1.0 } else { -1.0 });
    let (p20, p0) = (psnr(&tenth, &z, 1.0).unwrap(), psnr(&one, &z, 1.0).unwrap());
    let psnr_err = (p20 - 20.0).abs().max(p0.abs());
    outcome(
        ssim_err <= 1e-8 && psnr_err <= 1e-9,
        format!("ssim vs direct oracle {ssim_err:.1e}; psnr mse 0.01 -> {p20} dB, mse 1 -> {p0} dB"),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "fft correctness", guarded(c1_fft)),
        (2, "spectral conv = circular conv", guarded(c2_spectral_conv)),
        (3, "gradient suite", guarded(c3_gradients)),
    ];
    println!("training the NIO pathway for criteria 4, 5, 6, 9");
    match catch_unwind(train_nio) {
        Ok(run) => {
            results.push((4, "resolution invariance", guarded(|| c4_resolution(&run))));
            results.push((5, "desk-scale learning", guarded(|| c5_learning(&run))));
            results.push((6, "drop-schedule ordering", guarded(|| c6_drop_schedule(&run))));
            results.push((9, "checkpoint round trip and resume", guarded(|| c9_checkpoint(&run))));
        }
        Err(_) => {
            for (n, name) in [
                (4, "resolution invariance"),
                (5, "desk-scale learning"),
                (6, "drop-schedule ordering"),
                (9, "checkpoint round trip and resume"),
            ] {
                results.push((n, name, outcome(false, "training run panicked".into())));
            }
        }
    }
    results.push((7, "blend contract", guarded(c7_blend)));
    results.push((8, "adacof identity and convexity", guarded(c8_adacof)));
    results.push((10, "metric oracles", guarded(c10_metrics)));
    results.sort_by_key(|r| r.0);

    for (n, name, o) in &results {
        println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
