//! The five subcommands. Machine-readable results go to stdout as one JSON
//! object per line; progress and warnings go to stderr.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use adafnio_core::checkpoint::CheckpointFile;
use adafnio_core::data::{
    gen_sequences, gen_synthetic, load_triplets, materialize, read_image, texture, write_image, Sequence,
    SyntheticSpec, Triplet,
};
use adafnio_core::eval::{drop_k_scores, evaluate, Scores};
use adafnio_core::model::AdaFnio;
use adafnio_core::train::{load_model, EpochRecord, Trainer};
use adafnio_core::ParamStore;
use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const LOG: &str = "metrics.jsonl";
pub const EVAL_REPORT: &str = "eval.jsonl";
pub const RESTEST_REPORT: &str = "restest.jsonl";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_e{epoch:04}.ckpt")
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    count: usize,
    spec: &'a SyntheticSpec,
}

pub fn gen_data(config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let out = out.context("gen-data needs --out")?;
    let spec = &config.data.synthetic;
    let triplets = gen_synthetic(spec)?;
    let manifest = Manifest { seed: spec.seed, count: spec.count, spec };
    materialize(out, &triplets, &manifest).with_context(|| format!("writing dataset to {}", out.display()))?;
    config.echo(out)?;
    println!("{}", json!({ "sequences": triplets.len(), "images": 3 * triplets.len() }));
    Ok(())
}

/// Triplets from `data.dataset`, or generated from `data.synthetic`, split
/// into training and validation parts.
fn load_split(config: &RunConfig) -> Result<(Vec<Triplet<f32>>, Vec<Triplet<f32>>)> {
    let mut all: Vec<Triplet<f32>> = match &config.data.dataset {
        Some(dir) => {
            let loaded = load_triplets(dir)?;
            for s in &loaded.skipped {
                eprintln!("warning: skipped {}: {}", s.id, s.reason);
            }
            loaded.triplets
        }
        None => gen_synthetic(&config.data.synthetic)?.iter().map(Triplet::cast).collect(),
    };
    let n_val = (all.len() as f64 * config.data.val_fraction).round() as usize;
    ensure!(n_val < all.len(), "no triplets left for training after holding out {n_val} for validation");
    let val = all.split_off(all.len() - n_val);
    Ok((all, val))
}

fn check_frames(config: &RunConfig, set: &[Triplet<f32>], crop: Option<usize>) -> Result<()> {
    let Some(t) = set.first() else { return Ok(()) };
    let (c, h, w) = t.dims();
    ensure!(c == config.model.channels, "frames have {c} channels but model.channels is {}", config.model.channels);
    let (h, w) = crop.map_or((h, w), |s| (s, s));
    config.model.check_size(h, w)?;
    Ok(())
}

fn best_line(trainer: &Trainer, val: &[Triplet<f32>]) -> Result<Value> {
    if let Some(b) = trainer.best {
        return Ok(json!({ "best_epoch": b.epoch, "best_val_psnr": b.psnr, "best_val_ssim": b.ssim }));
    }
    if val.is_empty() {
        return Ok(json!({ "best_epoch": null, "best_val_psnr": null, "best_val_ssim": null }));
    }
    let s = evaluate(&trainer.model, &trainer.store, val, trainer.config.threads)?;
    Ok(json!({ "best_epoch": trainer.epoch, "best_val_psnr": s.psnr, "best_val_ssim": s.ssim }))
}

/// Log lines of epochs up to `epoch`, so a resumed run continues the log of
/// the run it resumes.
fn log_prefix(path: &Path, epoch: usize) -> Result<String> {
    if epoch == 0 || !path.exists() {
        return Ok(String::new());
    }
    let mut kept = String::new();
    for line in fs::read_to_string(path)?.lines() {
        let rec: EpochRecord = serde_json::from_str(line).with_context(|| format!("bad line in {}", path.display()))?;
        if rec.epoch <= epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

pub fn train(config: &RunConfig, out: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let out = out.context("train needs --out")?;
    config.echo(out)?;
    let (train, val) = load_split(config)?;
    check_frames(config, &train, config.training.crop)?;
    check_frames(config, &val, None)?;

    let mut trainer = match resume {
        Some(path) => {
            let ckpt = CheckpointFile::load(path).with_context(|| format!("loading {}", path.display()))?;
            ckpt.check_model(&config.model)?;
            Trainer::from_checkpoint(&ckpt, config.training.clone())?
        }
        None => Trainer::new(&config.model, config.training.clone(), config.seed)?,
    };

    let log_path = out.join(LOG);
    fs::write(&log_path, log_prefix(&log_path, trainer.epoch)?)?;
    let mut log = OpenOptions::new().append(true).open(&log_path)?;
    if trainer.epoch >= config.training.epochs {
        trainer.to_checkpoint().save(&out.join(checkpoint_name(trainer.epoch)))?;
    }
    trainer.fit(&train, &val, |t, r| {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        writeln!(log, "{line}")?;
        eprintln!("epoch {}: {line}", r.epoch);
        if t.checkpoint_due() {
            t.to_checkpoint().save(&out.join(checkpoint_name(t.epoch)))?;
        }
        Ok(())
    })?;
    println!("{}", best_line(&trainer, &val)?);
    Ok(())
}

pub fn infer(checkpoint: &Path, frame0: &Path, frame1: &Path, output: &Path) -> Result<()> {
    let ckpt = CheckpointFile::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (model, store) = load_model(&ckpt)?;
    let (a, b) = (read_image(frame0)?, read_image(frame1)?);
    ensure!(a.shape() == b.shape(), "frames differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    ensure!(c == model.config.channels, "frames have {c} channels, the model expects {}", model.config.channels);
    model.config.check_size(h, w)?;
    let y = model.predict(&store, &a.unsqueeze0(), &b.unsqueeze0())?;
    write_image(output, &y.select0(0))?;
    Ok(())
}

/// Loads a checkpoint and aligns the synthetic spec with it: textures live on
/// the model's base grid and have its channel count.
fn load_for_eval(config: &mut RunConfig, checkpoint: &Path) -> Result<(AdaFnio, ParamStore<f32>)> {
    let ckpt = CheckpointFile::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (model, store) = load_model(&ckpt)?;
    config.model = model.config.clone();
    config.data.synthetic.channels = model.config.channels;
    config.data.synthetic.resolution = model.config.nio.base_resolution;
    config.data.synthetic.validate()?;
    Ok((model, store))
}

fn scores_json(s: &Scores) -> Value {
    json!({ "psnr": s.psnr, "ssim": s.ssim, "count": s.count })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}

/// The synthetic textures of `spec` sampled on a `res x res` grid, or why
/// the model cannot take that size.
fn score_resolution(
    model: &AdaFnio,
    store: &ParamStore<f32>,
    spec: &SyntheticSpec,
    res: usize,
    threads: usize,
) -> Result<std::result::Result<Scores, String>> {
    if res == 0 {
        return Ok(Err("resolution 0".into()));
    }
    if let Err(e) = model.config.check_size(res, res) {
        return Ok(Err(e.to_string()));
    }
    let triplets = (0..spec.count)
        .map(|i| {
            let tex = texture(spec, i);
            let f = |t| tex.frame_at(t, res, res).map(|x| x.cast::<f32>());
            Triplet::new(format!("r{i:05}"), f(-1.0)?, f(0.0)?, f(1.0)?)
        })
        .collect::<adafnio_core::Result<Vec<_>>>();
    match triplets {
        Ok(t) => Ok(Ok(evaluate(model, store, &t, threads)?)),
        Err(e) => Ok(Err(e.to_string())),
    }
}

fn emit(rows: &[Value], out: Option<&Path>, report: &str) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    print!("{text}");
    if let Some(dir) = out {
        fs::write(dir.join(report), text)?;
    }
    Ok(())
}

pub fn eval(mut config: RunConfig, out: Option<&Path>, checkpoint: &Path) -> Result<()> {
    let (model, store) = load_for_eval(&mut config, checkpoint)?;
    if let Some(dir) = out {
        config.echo(dir)?;
    }
    let threads = config.training.threads;
    let spec = &config.data.synthetic;
    let mut rows = Vec::new();
    for &k in &config.evaluation.drop {
        if k == 0 || !k.is_power_of_two() {
            bail!("drop {k} is not a power of two");
        }
        let row = match (&config.data.dataset, k) {
            (Some(dir), 1) => {
                let loaded = load_triplets(dir)?;
                let s = evaluate(&model, &store, &loaded.triplets, threads)?;
                let head =
                    json!({ "setting": "drop", "drop": 1, "source": "dataset", "skipped": loaded.skipped.len() });
                merge(head, scores_json(&s))
            }
            _ => {
                let length = config.evaluation.sequence_length.max(2 * k + 1);
                let seqs: Vec<Sequence<f32>> = gen_sequences(spec, length)?.iter().map(Sequence::cast).collect();
                let s = drop_k_scores(&model, &store, &seqs, k)?;
                merge(json!({ "setting": "drop", "drop": k, "source": "synthetic" }), scores_json(&s))
            }
        };
        rows.push(row);
    }
    for &r in &config.evaluation.resolutions {
        let head = json!({ "setting": "resolution", "resolution": r });
        rows.push(match score_resolution(&model, &store, spec, r, threads)? {
            Ok(s) => merge(merge(head, json!({ "admissible": true })), scores_json(&s)),
            Err(reason) => merge(head, json!({ "admissible": false, "reason": reason })),
        });
    }
    emit(&rows, out, EVAL_REPORT)
}

pub fn restest(mut config: RunConfig, out: Option<&Path>, checkpoint: &Path) -> Result<()> {
    let (model, store) = load_for_eval(&mut config, checkpoint)?;
    if let Some(dir) = out {
        config.echo(dir)?;
    }
    let threads = config.training.threads;
    let spec = &config.data.synthetic;
    let base = model.config.nio.base_resolution;
    let base_ssim = match score_resolution(&model, &store, spec, base, threads)? {
        Ok(s) => s.ssim,
        Err(reason) => bail!("the base resolution {base} is not admissible: {reason}"),
    };
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &scale in &config.evaluation.scales {
        ensure!(scale > 0.0, "scale {scale} must be positive");
        let res = (base as f64 * scale).round() as usize;
        let head = json!({ "scale": scale, "resolution": res });
        rows.push(match score_resolution(&model, &store, spec, res, threads)? {
            Ok(s) => {
                let degradation = base_ssim - s.ssim;
                worst = worst.max(degradation);
                merge(merge(head, json!({ "admissible": true, "degradation": degradation })), scores_json(&s))
            }
            Err(reason) => merge(head, json!({ "admissible": false, "reason": reason })),
        });
    }
    rows.push(json!({ "base_resolution": base, "base_ssim": base_ssim, "max_degradation": worst }));
    emit(&rows, out, RESTEST_REPORT)
}
