//! Scoring of triplets and of dropped-frame reconstruction.
//!
//! Predictions run in fixed chunks of [`CHUNK`] pairs, and chunks are spread
//! over threads, so results do not depend on the thread count.

use serde::{Deserialize, Serialize};

use crate::data::{Sequence, Triplet};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::AdaFnio;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub count: usize,
}

impl Scores {
    fn mean(pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len().max(1) as f64;
        Self {
            psnr: pairs.iter().map(|p| p.0).sum::<f64>() / n,
            ssim: pairs.iter().map(|p| p.1).sum::<f64>() / n,
            count: pairs.len(),
        }
    }
}

/// Predicted midpoints of every `(first, last)` pair, in input order.
pub fn predict_pairs<T: Real>(
    model: &AdaFnio,
    store: &ParamStore<T>,
    pairs: &[(&Tensor<T>, &Tensor<T>)],
    threads: usize,
) -> Result<Vec<Tensor<T>>> {
    let chunks: Vec<&[(&Tensor<T>, &Tensor<T>)]> = pairs.chunks(CHUNK).collect();
    let run = |chunk: &[(&Tensor<T>, &Tensor<T>)]| -> Result<Vec<Tensor<T>>> {
        let a: Vec<&Tensor<T>> = chunk.iter().map(|p| p.0).collect();
        let b: Vec<&Tensor<T>> = chunk.iter().map(|p| p.1).collect();
        let y = model.predict(store, &Tensor::stack(&a)?, &Tensor::stack(&b)?)?;
        Ok((0..chunk.len()).map(|i| y.select0(i)).collect())
    };
    let threads = threads.clamp(1, chunks.len().max(1));
    let results: Vec<Result<Vec<Tensor<T>>>> = if threads == 1 {
        chunks.iter().map(|c| run(c)).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<Tensor<T>>>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let per = chunks.len().div_ceil(threads);
            for (ci, slot) in chunks.chunks(per).zip(slots.chunks_mut(per)) {
                let run = &run;
                s.spawn(move || {
                    for (c, out) in ci.iter().zip(slot) {
                        *out = Some(run(c));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };
    let mut out = Vec::with_capacity(pairs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Mean PSNR and SSIM of midpoint predictions against the stored middles.
pub fn evaluate<T: Real>(
    model: &AdaFnio,
    store: &ParamStore<T>,
    triplets: &[Triplet<T>],
    threads: usize,
) -> Result<Scores> {
    if triplets.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let pairs: Vec<_> = triplets.iter().map(|t| (&t.first, &t.last)).collect();
    let preds = predict_pairs(model, store, &pairs, threads)?;
    let scored = preds
        .iter()
        .zip(triplets)
        .map(|(p, t)| Ok((psnr(p, &t.middle, 1.0)?, ssim(p, &t.middle)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scores::mean(&scored))
}

/// Fills the interior of `frames[lo..=hi]` by recursive midpoint prediction
/// from the two endpoints; `hi - lo` must be a power of two.
pub fn recursive_midpoints<T: Real>(
    model: &AdaFnio,
    store: &ParamStore<T>,
    lo: Tensor<T>,
    hi: Tensor<T>,
    gap: usize,
) -> Result<Vec<Tensor<T>>> {
    if gap < 2 || !gap.is_power_of_two() {
        return Err(Error::invalid("recursive_midpoints", format!("gap {gap} is not a power of two >= 2")));
    }
    let mut frames: Vec<Option<Tensor<T>>> = vec![None; gap + 1];
    frames[0] = Some(lo);
    frames[gap] = Some(hi);
    let mut step = gap;
    while step > 1 {
        let half = step / 2;
        let starts: Vec<usize> = (0..gap).step_by(step).collect();
        let pairs: Vec<_> = starts
            .iter()
            .map(|&s| (frames[s].as_ref().expect("known"), frames[s + step].as_ref().expect("known")))
            .collect();
        let mids = predict_pairs(model, store, &pairs, 1)?;
        for (s, m) in starts.into_iter().zip(mids) {
            frames[s + half] = Some(m);
        }
        step = half;
    }
    Ok(frames[1..gap].iter().map(|f| f.clone().expect("filled")).collect())
}

/// Drop-`k` protocol: keep frames `0` and `2k` of each window of `2k + 1`
/// frames, reconstruct the `2k - 1` frames between them and score every
/// reconstructed frame. `k` must be a power of two; windows do not overlap.
pub fn drop_k_scores<T: Real>(
    model: &AdaFnio,
    store: &ParamStore<T>,
    sequences: &[Sequence<T>],
    k: usize,
) -> Result<Scores> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::invalid("drop_k", format!("drop {k} is not a power of two")));
    }
    let gap = 2 * k;
    let mut scored = Vec::new();
    for seq in sequences {
        if seq.frames.len() < gap + 1 {
            return Err(Error::Dataset(format!(
                "sequence {} has {} frames; drop {k} needs {}",
                seq.id,
                seq.frames.len(),
                gap + 1
            )));
        }
        for start in (0..seq.frames.len() - gap).step_by(gap) {
            let truth = &seq.frames[start..=start + gap];
            let recon = recursive_midpoints(model, store, truth[0].clone(), truth[gap].clone(), gap)?;
            for (p, t) in recon.iter().zip(&truth[1..gap]) {
                scored.push((psnr(p, t, 1.0)?, ssim(p, t)?));
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::Dataset("no sequences to score".into()));
    }
    Ok(Scores::mean(&scored))
}
