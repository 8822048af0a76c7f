//! The full interpolator: `w1 * NIO(I0, I1) + w2 * AdaCoF(I0, I1)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adacof::{AdaCofConfig, AdaCofNet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nio::{NioConfig, NioNet};
use crate::nn::Ctx;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Both,
    Nio,
    Adacof,
}

impl Pathway {
    pub fn uses_nio(self) -> bool {
        matches!(self, Pathway::Both | Pathway::Nio)
    }

    pub fn uses_adacof(self) -> bool {
        matches!(self, Pathway::Both | Pathway::Adacof)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendWeights {
    pub w1: f64,
    pub w2: f64,
    pub trainable: bool,
}

impl Default for BlendWeights {
    fn default() -> Self {
        Self { w1: 0.01, w2: 1.0, trainable: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Frame channels: 1 for grayscale, 3 for color.
    pub channels: usize,
    /// Which pathways exist. A single-pathway model returns that pathway's
    /// output unscaled and has no blend weights.
    pub pathway: Pathway,
    pub nio: NioConfig,
    pub adacof: AdaCofConfig,
    pub blend: BlendWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            pathway: Pathway::Both,
            nio: NioConfig::default(),
            adacof: AdaCofConfig::default(),
            blend: BlendWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("model.channels must be >= 1".into()));
        }
        if !(self.blend.w1.is_finite() && self.blend.w2.is_finite()) {
            return Err(Error::Config("blend weights must be finite".into()));
        }
        if self.pathway.uses_nio() {
            self.nio.validate()?;
        }
        if self.pathway.uses_adacof() {
            self.adacof.validate()?;
        }
        Ok(())
    }

    /// Rejects frame sizes either active pathway cannot process.
    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        if self.pathway.uses_nio() {
            self.nio.check_size(height, width)?;
        }
        if self.pathway.uses_adacof() {
            self.adacof.check_size(height, width)?;
        }
        Ok(())
    }
}

/// Trainable scalar counts per pathway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Census {
    pub nio: usize,
    pub adacof: usize,
    pub blend: usize,
    pub total: usize,
}

pub fn parameter_census(config: &ModelConfig) -> Census {
    let c = config.channels;
    let nio = if config.pathway.uses_nio() { config.nio.parameter_count(c) } else { 0 };
    let adacof = if config.pathway.uses_adacof() { config.adacof.parameter_count(c) } else { 0 };
    let blend = if config.pathway == Pathway::Both && config.blend.trainable { 2 } else { 0 };
    Census { nio, adacof, blend, total: nio + adacof + blend }
}

#[derive(Clone, Debug)]
pub struct AdaFnio {
    pub config: ModelConfig,
    pub nio: Option<NioNet>,
    pub adacof: Option<AdaCofNet>,
    pub w1: Option<ParamId>,
    pub w2: Option<ParamId>,
}

impl AdaFnio {
    /// Registers parameters in a fixed order: NIO, AdaCoF, blend weights.
    pub fn new<T: Real>(store: &mut ParamStore<T>, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let nio = match config.pathway.uses_nio() {
            true => Some(NioNet::new(store, &mut rng, "nio", &config.nio, c)?),
            false => None,
        };
        let adacof = match config.pathway.uses_adacof() {
            true => Some(AdaCofNet::new(store, &mut rng, "adacof", &config.adacof, c)?),
            false => None,
        };
        let (mut w1, mut w2) = (None, None);
        if config.pathway == Pathway::Both {
            let a = store.add("blend.w1", Tensor::scalar(T::of(config.blend.w1)));
            let b = store.add("blend.w2", Tensor::scalar(T::of(config.blend.w2)));
            store.set_requires_grad(a, config.blend.trainable);
            store.set_requires_grad(b, config.blend.trainable);
            (w1, w2) = (Some(a), Some(b));
        }
        Ok(Self { config: config.clone(), nio, adacof, w1, w2 })
    }

    /// Convenience constructor returning a fresh parameter store.
    pub fn init<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let model = Self::new(&mut store, config, seed)?;
        Ok((model, store))
    }

    fn check_frames<T: Real>(&self, i0: Var<'_, T>, i1: Var<'_, T>) -> Result<()> {
        if i0.shape() != i1.shape() {
            return Err(Error::shape("adafnio_forward", &i0.shape(), &i1.shape()));
        }
        let (_, c, h, w) = i0.value().dims4()?;
        if c != self.config.channels {
            return Err(Error::invalid(
                "adafnio_forward",
                format!("frames have {c} channels, model expects {}", self.config.channels),
            ));
        }
        self.config.check_size(h, w)
    }

    /// Unscaled outputs of the active pathways.
    pub fn pathway_outputs<'a, T: Real>(
        &self,
        ctx: Ctx<'a, T>,
        i0: Var<'a, T>,
        i1: Var<'a, T>,
    ) -> Result<(Option<Var<'a, T>>, Option<Var<'a, T>>)> {
        self.check_frames(i0, i1)?;
        let n = self.nio.as_ref().map(|m| m.forward(ctx, i0, i1)).transpose()?;
        let a = self.adacof.as_ref().map(|m| m.forward(ctx, i0, i1)).transpose()?;
        Ok((n, a))
    }

    /// Predicts the midpoint of `[B, C, H, W]` frame batches.
    pub fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<Var<'a, T>> {
        match self.pathway_outputs(ctx, i0, i1)? {
            (Some(n), Some(a)) => {
                let (w1, w2) = (self.w1.expect("blend w1"), self.w2.expect("blend w2"));
                n.mul_scalar(ctx.p(w1))?.add(a.mul_scalar(ctx.p(w2))?)
            }
            (Some(n), None) => Ok(n),
            (None, Some(a)) => Ok(a),
            (None, None) => unreachable!("a model has at least one pathway"),
        }
    }

    /// Gradient-free forward of `[C, H, W]` or `[B, C, H, W]` frames.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, i0: &Tensor<T>, i1: &Tensor<T>) -> Result<Tensor<T>> {
        let single = i0.rank() == 3;
        let (a, b) = if single { (i0.unsqueeze0(), i1.unsqueeze0()) } else { (i0.clone(), i1.clone()) };
        let tape = Tape::frozen();
        let ctx = Ctx::new(&tape, store);
        let y = self.forward(ctx, tape.constant(a), tape.constant(b))?;
        let out = (*y.value()).clone();
        Ok(if single { out.select0(0) } else { out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            channels: 1,
            nio: NioConfig {
                base_resolution: 32,
                lifting_channels: 4,
                level_channels: [4, 4, 4, 4],
                ..NioConfig::default()
            },
            adacof: AdaCofConfig { width: 8, head_width: 4, ..AdaCofConfig::default() },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn census_matches_store_for_every_pathway() {
        for pathway in [Pathway::Both, Pathway::Nio, Pathway::Adacof] {
            let config = ModelConfig { pathway, ..small() };
            let (_, store) = AdaFnio::init::<f32>(&config, 3).unwrap();
            let census = parameter_census(&config);
            assert_eq!(census.total, store.num_scalars());
            assert_eq!(census.nio, store.num_scalars_with_prefix("nio."));
            assert_eq!(census.adacof, store.num_scalars_with_prefix("adacof."));
        }
    }

    #[test]
    fn inadmissible_size_names_the_pathway() {
        let (model, store) = AdaFnio::init::<f32>(&small(), 0).unwrap();
        let x = Tensor::zeros(&[1, 20, 20]);
        match model.predict(&store, &x, &x) {
            Err(Error::Inadmissible { pathway: "nio", .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
