//! Losses, Adam with decoupled weight decay, and the epoch loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{CheckpointFile, CheckpointMeta, Record, RecordData};
use crate::data::{random_crop, Triplet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Scores};
use crate::model::{AdaFnio, ModelConfig};
use crate::nn::{uniform, Ctx};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Weight of the feature-space term in [`combined_loss`].
pub const PERCEPTUAL_WEIGHT: f64 = 0.01;

fn check_pair<T: Real>(op: &'static str, pred: Var<'_, T>, target: Var<'_, T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(op, &pred.shape(), &target.shape()));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("l1_loss", pred, target)?;
    Ok(pred.sub(target)?.abs().mean())
}

/// Mean squared difference.
pub fn l2_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("l2_loss", pred, target)?;
    Ok(pred.sub(target)?.square().mean())
}

/// Maps `[B, C, H, W]` frames to a feature space for the perceptual term.
pub trait FeatureExtractor<T: Real> {
    fn features<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>>;
}

/// Features equal to the frames themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFeatures;

impl<T: Real> FeatureExtractor<T> for IdentityFeatures {
    fn features<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x)
    }
}

/// Fixed random 3x3 convolutions with ReLU between them. Not trained; it only
/// exercises the perceptual code path without pretrained weights.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures {
    pub kernels: Vec<Tensor<f64>>,
}

impl RandomConvFeatures {
    pub fn new(channels: usize, widths: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c_in = channels;
        let kernels = widths
            .iter()
            .map(|&c_out| {
                let bound = 1.0 / ((c_in * 9) as f64).sqrt();
                let k = uniform(&mut rng, &[c_out, c_in, 3, 3], bound);
                c_in = c_out;
                k
            })
            .collect();
        Self { kernels }
    }
}

impl<T: Real> FeatureExtractor<T> for RandomConvFeatures {
    fn features<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let mut h = x;
        for (i, k) in self.kernels.iter().enumerate() {
            if i > 0 {
                h = h.relu();
            }
            h = h.conv2d(tape.constant(k.cast()), None, 1, 1)?;
        }
        Ok(h)
    }
}

/// `l1 + 0.01 * mean |F(pred) - F(target)|`; exactly `l1` without an extractor.
pub fn combined_loss<'t, T: Real>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    feat: Option<&dyn FeatureExtractor<T>>,
) -> Result<Var<'t, T>> {
    let l1 = l1_loss(pred, target)?;
    let Some(f) = feat else { return Ok(l1) };
    let (fp, ft) = (f.features(pred)?, f.features(target)?);
    check_pair("combined_loss", fp, ft)?;
    l1.add(fp.sub(ft)?.abs().mean().scale(T::of(PERCEPTUAL_WEIGHT)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// One update of every trainable parameter:
    /// `theta <- theta * (1 - lr * wd)`, then the bias-corrected Adam step.
    /// Nothing is modified if any trainable parameter lacks a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("optimizer tracks {} parameters, store has {}", self.m.len(), store.len()),
            ));
        }
        for (id, p) in store.iter() {
            if p.requires_grad {
                let g = store.grad_or_err(id)?;
                if g.shape() != p.value.shape() {
                    return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
                }
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (c.beta1, c.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - c.lr * c.weight_decay;
        for (i, p) in store.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let g = p.grad.as_ref().expect("checked above");
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, th) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j].as_f64();
                let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let update = c.lr * (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                *th = T::of(th.as_f64() * decay - update);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perceptual {
    None,
    Identity,
    RandomConv,
}

/// Channel widths and seed of the random perceptual extractor.
pub const RANDOM_FEATURE_WIDTHS: [usize; 2] = [8, 8];
pub const RANDOM_FEATURE_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Loss before `perceptual_from_epoch`.
    pub loss: LossKind,
    pub perceptual: Perceptual,
    /// First 0-based epoch trained with [`combined_loss`]; never if unset.
    pub perceptual_from_epoch: Option<usize>,
    pub optimizer: AdamConfig,
    /// Save every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Random square crop side applied per sample; whole frames if unset.
    pub crop: Option<usize>,
    /// Worker threads for validation. Training steps are always serial.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            loss: LossKind::L1,
            perceptual: Perceptual::None,
            perceptual_from_epoch: None,
            optimizer: AdamConfig::default(),
            checkpoint_every: 1,
            crop: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.optimizer.validate()
    }

    /// Name of the loss optimized during 0-based `epoch`.
    pub fn loss_name(&self, epoch: usize) -> &'static str {
        match (self.perceptual_from_epoch, self.loss) {
            (Some(s), _) if epoch >= s => "combined",
            (_, LossKind::L1) => "l1",
            (_, LossKind::L2) => "l2",
        }
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub loss: String,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub epoch: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Model, parameters, optimizer and data RNG, advanced one epoch at a time.
pub struct Trainer {
    pub model: AdaFnio,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub best: Option<Best>,
    rng: ChaCha8Rng,
    features: Option<RandomConvFeatures>,
}

/// Stream of the data RNG; the model initializer uses the plain seed.
const DATA_STREAM: u64 = 1;

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (model, store) = AdaFnio::init::<f32>(model_config, seed)?;
        let adam = Adam::new(config.optimizer.clone(), &store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DATA_STREAM);
        let features = Self::features_for(model_config, &config);
        Ok(Self { model, store, adam, config, epoch: 0, best: None, rng, features })
    }

    fn features_for(model: &ModelConfig, config: &TrainConfig) -> Option<RandomConvFeatures> {
        (config.perceptual == Perceptual::RandomConv)
            .then(|| RandomConvFeatures::new(model.channels, &RANDOM_FEATURE_WIDTHS, RANDOM_FEATURE_SEED))
    }

    fn extractor(&self) -> Option<&dyn FeatureExtractor<f32>> {
        match self.config.perceptual {
            Perceptual::None => None,
            Perceptual::Identity => Some(&IdentityFeatures),
            Perceptual::RandomConv => self.features.as_ref().map(|f| f as &dyn FeatureExtractor<f32>),
        }
    }

    fn batch_loss<'t>(&self, epoch: usize, pred: Var<'t, f32>, target: Var<'t, f32>) -> Result<Var<'t, f32>> {
        match self.config.loss_name(epoch) {
            "combined" => combined_loss(pred, target, self.extractor()),
            "l2" => l2_loss(pred, target),
            _ => l1_loss(pred, target),
        }
    }

    /// Loss of `triplets` under the current parameters, for the loss of
    /// 0-based `epoch`.
    pub fn loss_on(&self, epoch: usize, triplets: &[&Triplet<f32>]) -> Result<f64> {
        let (i0, i1, mid) = stack(triplets)?;
        let tape = Tape::frozen();
        let ctx = Ctx::new(&tape, &self.store);
        let pred = self.model.forward(ctx, tape.constant(i0), tape.constant(i1))?;
        Ok(self.batch_loss(epoch, pred, tape.constant(mid))?.value().item().as_f64())
    }

    /// One optimizer step on `batch`; returns the pre-step loss.
    pub fn step(&mut self, batch: &[&Triplet<f32>]) -> Result<f64> {
        self.step_at(0, batch)
    }

    fn step_at(&mut self, index: usize, batch: &[&Triplet<f32>]) -> Result<f64> {
        let (i0, i1, mid) = stack(batch)?;
        let tape = Tape::new();
        let loss = {
            let ctx = Ctx::new(&tape, &self.store);
            let pred = self.model.forward(ctx, tape.constant(i0), tape.constant(i1))?;
            self.batch_loss(self.epoch, pred, tape.constant(mid))?
        };
        let value = loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: self.epoch, batch: index });
        }
        let grads = tape.backward(loss)?;
        self.store.zero_grads();
        self.store.accumulate(&grads);
        self.adam.step(&mut self.store)?;
        Ok(value)
    }

    /// Trains one epoch and scores `val`.
    pub fn run_epoch(&mut self, train: &[Triplet<f32>], val: &[Triplet<f32>]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<Triplet<f32>> = match self.config.crop {
                Some(side) => {
                    chunk.iter().map(|&i| random_crop(&train[i], side, &mut self.rng)).collect::<Result<_>>()?
                }
                None => chunk.iter().map(|&i| train[i].clone()).collect(),
            };
            let refs: Vec<&Triplet<f32>> = batch.iter().collect();
            let loss = self.step_at(b, &refs)?;
            total += loss * chunk.len() as f64;
        }
        let name = self.config.loss_name(self.epoch).to_string();
        self.epoch += 1;
        let (val_psnr, val_ssim) = match val.is_empty() {
            true => (None, None),
            false => {
                let Scores { psnr, ssim, .. } = evaluate(&self.model, &self.store, val, self.config.threads)?;
                if self.best.is_none_or(|b| ssim > b.ssim) {
                    self.best = Some(Best { epoch: self.epoch, psnr, ssim });
                }
                (Some(psnr), Some(ssim))
            }
        };
        Ok(EpochRecord { epoch: self.epoch, loss: name, train_loss: total / train.len() as f64, val_psnr, val_ssim })
    }

    /// Runs epochs until `config.epochs` have completed, calling `on_epoch`
    /// after each one.
    pub fn fit(
        &mut self,
        train: &[Triplet<f32>],
        val: &[Triplet<f32>],
        mut on_epoch: impl FnMut(&Self, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(train, val)?;
            on_epoch(self, &rec)?;
            log.push(rec);
        }
        Ok(log)
    }

    /// Whether the cadence asks for a checkpoint after the current epoch.
    pub fn checkpoint_due(&self) -> bool {
        let every = self.config.checkpoint_every;
        self.epoch == self.config.epochs || (every > 0 && self.epoch.is_multiple_of(every))
    }

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let mut records = Vec::new();
        for (_, p) in self.store.iter() {
            records.push(Record::tensor(format!("param/{}", p.name), &p.value));
        }
        for (i, (_, p)) in self.store.iter().enumerate() {
            records.push(Record::tensor(format!("adam.m/{}", p.name), &self.adam.m[i]));
            records.push(Record::tensor(format!("adam.v/{}", p.name), &self.adam.v[i]));
        }
        records.push(Record::u64s("adam.t", vec![self.adam.t]));
        records.push(Record::u64s("epoch", vec![self.epoch as u64]));
        let seed = self.rng.get_seed();
        let mut state: Vec<u64> = seed.chunks(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let pos = self.rng.get_word_pos();
        state.extend([self.rng.get_stream(), pos as u64, (pos >> 64) as u64]);
        records.push(Record::u64s("rng", state));
        if let Some(b) = self.best {
            let t = Tensor::new(&[3], vec![b.epoch as f64, b.psnr, b.ssim]).expect("3 values");
            records.push(Record::tensor("best", &t));
        }
        CheckpointFile {
            meta: CheckpointMeta { model: self.model.config.clone(), optimizer: self.adam.config.clone() },
            records,
        }
    }

    /// Restores a trainer; `config.optimizer` must match the stored one.
    pub fn from_checkpoint(ckpt: &CheckpointFile, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if let Some(field) = crate::checkpoint::first_difference(
            &toml::Value::try_from(&config.optimizer).map_err(|e| Error::Config(e.to_string()))?,
            &toml::Value::try_from(&ckpt.meta.optimizer).map_err(|e| Error::Config(e.to_string()))?,
            "optimizer",
        ) {
            return Err(Error::ConfigMismatch { field });
        }
        let mut t = Self::new(&ckpt.meta.model, config, 0)?;
        t.store = load_params(&t.store, ckpt)?;
        for (i, (_, p)) in t.store.iter().enumerate() {
            t.adam.m[i] = f32_record(ckpt, &format!("adam.m/{}", p.name), p.value.shape())?;
            t.adam.v[i] = f32_record(ckpt, &format!("adam.v/{}", p.name), p.value.shape())?;
        }
        t.adam.t = u64_record(ckpt, "adam.t", 1)?[0];
        t.epoch = u64_record(ckpt, "epoch", 1)?[0] as usize;
        let state = u64_record(ckpt, "rng", 7)?;
        let mut seed = [0u8; 32];
        for (c, w) in seed.chunks_mut(8).zip(&state[..4]) {
            c.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(state[4]);
        rng.set_word_pos(state[5] as u128 | (state[6] as u128) << 64);
        t.rng = rng;
        t.best = match ckpt.record("best") {
            Ok(RecordData::F64(b)) if b.len() == 3 => {
                Some(Best { epoch: b.data()[0] as usize, psnr: b.data()[1], ssim: b.data()[2] })
            }
            Ok(_) => return Err(Error::Corrupt("record `best` has the wrong type".into())),
            Err(_) => None,
        };
        Ok(t)
    }

    /// Draws from the data RNG; exposed for tests of RNG restoration.
    pub fn rng_probe(&mut self) -> u64 {
        self.rng.gen()
    }
}

fn f32_record(ckpt: &CheckpointFile, name: &str, shape: &[usize]) -> Result<Tensor<f32>> {
    match ckpt.record(name)? {
        RecordData::F32(t) if t.shape() == shape => Ok(t.clone()),
        RecordData::F32(t) => {
            Err(Error::Corrupt(format!("record `{name}` has shape {:?}, expected {shape:?}", t.shape())))
        }
        _ => Err(Error::Corrupt(format!("record `{name}` is not f32"))),
    }
}

fn u64_record(ckpt: &CheckpointFile, name: &str, len: usize) -> Result<Vec<u64>> {
    match ckpt.record(name)? {
        RecordData::U64 { data, .. } if data.len() == len => Ok(data.clone()),
        _ => Err(Error::Corrupt(format!("record `{name}` is not {len} u64 values"))),
    }
}

/// Parameters of `template` with values replaced from the checkpoint.
pub fn load_params(template: &ParamStore<f32>, ckpt: &CheckpointFile) -> Result<ParamStore<f32>> {
    let mut store = template.clone();
    for p in store.iter_mut() {
        p.value = f32_record(ckpt, &format!("param/{}", p.name), p.value.shape())?;
    }
    Ok(store)
}

/// Rebuilds a model and its parameters for inference.
pub fn load_model(ckpt: &CheckpointFile) -> Result<(AdaFnio, ParamStore<f32>)> {
    let (model, template) = AdaFnio::init::<f32>(&ckpt.meta.model, 0)?;
    let store = load_params(&template, ckpt)?;
    Ok((model, store))
}

/// `[B, C, H, W]` first, last and middle frames.
pub fn stack<T: Real>(batch: &[&Triplet<T>]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let f: Vec<&Tensor<T>> = batch.iter().map(|t| &t.first).collect();
    let l: Vec<&Tensor<T>> = batch.iter().map(|t| &t.last).collect();
    let m: Vec<&Tensor<T>> = batch.iter().map(|t| &t.middle).collect();
    Ok((Tensor::stack(&f)?, Tensor::stack(&l)?, Tensor::stack(&m)?))
}
