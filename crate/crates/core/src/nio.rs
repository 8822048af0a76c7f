//! The neural interpolation operator pathway.
//!
//! Both frames pass through one shared token convolution and are summed, so
//! the pathway is exactly symmetric in its inputs. A four-level U-shaped stack
//! of FNO layers follows: each encoder level runs a global (spectral) layer
//! and then a stride-2 local convolution; each decoder level upsamples, runs a
//! local convolution, adds the encoder feature of the same resolution when
//! skips are enabled, and runs a global layer with the mirrored mode count.
//! A 1x1 projection returns to frame channels and `W_NIO`, a 1x1 convolution
//! initialized to the identity, scales the result.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx};
use crate::ops::ResampleMode;
use crate::params::{ParamId, ParamStore};
use crate::spectral::{check_mode_cap, FnoLayer, SpectralModes};
use crate::tensor::{Real, Tensor};

pub const LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NioConfig {
    pub base_resolution: usize,
    pub lifting_channels: usize,
    pub level_channels: [usize; LEVELS],
    pub level_modes: [SpectralModes; LEVELS],
    pub token_kernel: usize,
    pub token_stride: usize,
    /// Additive encoder-to-decoder connections at matching resolutions.
    pub skips: bool,
    /// `false` selects the reduced variant whose decoder levels are local
    /// convolutions only, leaving four spectral layers instead of eight.
    pub spectral_decoder: bool,
}

impl Default for NioConfig {
    fn default() -> Self {
        Self {
            base_resolution: 64,
            lifting_channels: 16,
            level_channels: [16, 32, 32, 64],
            level_modes: [
                SpectralModes::new(10, 10),
                SpectralModes::new(5, 5),
                SpectralModes::new(3, 3),
                SpectralModes::new(2, 2),
            ],
            token_kernel: 3,
            token_stride: 1,
            skips: true,
            spectral_decoder: true,
        }
    }
}

impl NioConfig {
    /// The large-scale geometry: 256-pixel crops and modes 42/21/10/5.
    pub fn full_scale() -> Self {
        Self {
            base_resolution: 256,
            lifting_channels: 32,
            level_channels: [32, 64, 128, 256],
            level_modes: [
                SpectralModes::new(42, 42),
                SpectralModes::new(21, 21),
                SpectralModes::new(10, 10),
                SpectralModes::new(5, 5),
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lifting_channels == 0 || self.level_channels.contains(&0) {
            return Err(Error::Config("nio channel widths must be >= 1".into()));
        }
        if self.token_kernel.is_multiple_of(2) || self.token_stride == 0 {
            return Err(Error::Config(format!(
                "nio token conv needs an odd kernel and stride >= 1, got kernel {} stride {}",
                self.token_kernel, self.token_stride
            )));
        }
        self.check_size(self.base_resolution, self.base_resolution)
    }

    /// Frame side length must be a multiple of this.
    pub fn size_multiple(&self) -> usize {
        self.token_stride << LEVELS
    }

    fn level_side(&self, side: usize, level: usize) -> usize {
        (side / self.token_stride) >> level
    }

    fn admissible_axis(&self, side: usize, axis: usize) -> bool {
        side > 0
            && side.is_multiple_of(self.size_multiple())
            && self.level_modes.iter().enumerate().all(|(l, m)| {
                let cap = self.level_side(side, l) / 2;
                let modes = if axis == 0 { m.modes1 } else { m.modes2 };
                modes >= 1 && modes <= cap
            })
    }

    /// Smallest admissible side not below `side` on the given axis.
    fn suggest(&self, side: usize, axis: usize) -> usize {
        let step = self.size_multiple();
        let mut s = side.div_ceil(step).max(1) * step;
        while !self.admissible_axis(s, axis) {
            s += step;
        }
        s
    }

    /// Accepts `(H, W)` if every level's grid is whole and respects the mode cap.
    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        let reason = if !height.is_multiple_of(m) || !width.is_multiple_of(m) || height == 0 || width == 0 {
            Some(format!("sides must be positive multiples of {m}"))
        } else {
            (0..LEVELS).find_map(|l| {
                let (h, w) = (self.level_side(height, l), self.level_side(width, l));
                check_mode_cap(self.level_modes[l], h, w).err().map(|e| format!("level {l}: {e}"))
            })
        };
        match reason {
            None => Ok(()),
            Some(reason) => Err(Error::Inadmissible {
                pathway: "nio",
                height,
                width,
                reason,
                suggest_h: self.suggest(height, 0),
                suggest_w: self.suggest(width, 1),
            }),
        }
    }

    /// Exact trainable scalar count for frames with `c` channels.
    pub fn parameter_count(&self, c: usize) -> usize {
        let (lift, w) = (self.lifting_channels, self.level_channels);
        let k = self.token_kernel;
        let mut n = Conv2d::count(c, lift, k, false) + lift;
        let mut prev = lift;
        for l in 0..LEVELS {
            n += FnoLayer::count(prev, w[l], self.level_modes[l]);
            n += Conv2d::count(w[l], w[l], 3, true);
            prev = w[l];
        }
        for l in (0..LEVELS).rev() {
            n += Conv2d::count(prev, w[l], 3, true);
            n += if self.spectral_decoder {
                FnoLayer::count(w[l], w[l], self.level_modes[l])
            } else {
                Conv2d::count(w[l], w[l], 3, true)
            };
            prev = w[l];
        }
        n + Conv2d::count(prev, c, 1, true) + c * c
    }
}

#[derive(Clone, Debug)]
enum DecoderBlock {
    Spectral(FnoLayer),
    Local(Conv2d),
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: Conv2d,
    block: DecoderBlock,
}

#[derive(Clone, Debug)]
struct EncoderLevel {
    fno: FnoLayer,
    down: Conv2d,
}

/// Latent code plus the per-level encoder features used by skips.
pub struct Encoded<'a, T> {
    pub latent: Var<'a, T>,
    pub features: Vec<Var<'a, T>>,
}

#[derive(Clone, Debug)]
pub struct NioNet {
    pub config: NioConfig,
    pub channels: usize,
    token_conv: Conv2d,
    token_bias: ParamId,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    project: Conv2d,
    pub w_nio: ParamId,
}

impl NioNet {
    /// Registers every parameter under `prefix` for `c`-channel frames.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        config: &NioConfig,
        c: usize,
    ) -> Result<Self> {
        config.validate()?;
        if c == 0 {
            return Err(Error::Config("frame channels must be >= 1".into()));
        }
        let (lift, w) = (config.lifting_channels, config.level_channels);
        let mut token_conv =
            Conv2d::new(store, rng, &format!("{prefix}.tokens"), c, lift, config.token_kernel, 1, false);
        token_conv.stride = config.token_stride;
        let token_bias = store.add(format!("{prefix}.tokens.bias"), Tensor::zeros(&[lift]));

        let mut prev = lift;
        let mut encoder = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let name = format!("{prefix}.enc{l}");
            let fno = FnoLayer::new(store, rng, &format!("{name}.fno"), prev, w[l], config.level_modes[l]);
            let down = Conv2d::new(store, rng, &format!("{name}.down"), w[l], w[l], 3, 2, true);
            encoder.push(EncoderLevel { fno, down });
            prev = w[l];
        }
        let mut decoder = Vec::with_capacity(LEVELS);
        for l in (0..LEVELS).rev() {
            let name = format!("{prefix}.dec{l}");
            let up = Conv2d::new(store, rng, &format!("{name}.up"), prev, w[l], 3, 1, true);
            let block = if config.spectral_decoder {
                DecoderBlock::Spectral(FnoLayer::new(
                    store,
                    rng,
                    &format!("{name}.fno"),
                    w[l],
                    w[l],
                    config.level_modes[l],
                ))
            } else {
                DecoderBlock::Local(Conv2d::new(store, rng, &format!("{name}.local"), w[l], w[l], 3, 1, true))
            };
            decoder.push(DecoderLevel { up, block });
            prev = w[l];
        }
        let project = Conv2d::new(store, rng, &format!("{prefix}.project"), prev, c, 1, 1, true);
        let w_nio = store.add(
            format!("{prefix}.w_nio"),
            Tensor::from_fn(&[c, c, 1, 1], |i| if i % (c + 1) == 0 { T::one() } else { T::zero() }),
        );
        Ok(Self { config: config.clone(), channels: c, token_conv, token_bias, encoder, decoder, project, w_nio })
    }

    /// `V_f * I0 + V_f * I1 + B` with one shared `V_f`.
    pub fn extract_tokens<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<Var<'a, T>> {
        extract_tokens(
            i0,
            i1,
            ctx.p(self.token_conv.weight),
            ctx.p(self.token_bias),
            self.token_conv.stride,
            self.token_conv.padding,
        )
    }

    pub fn encode<'a, T: Real>(&self, ctx: Ctx<'a, T>, tokens: Var<'a, T>) -> Result<Encoded<'a, T>> {
        let shape = tokens.shape();
        let (h, w) = (shape[2], shape[3]);
        if h % (1 << LEVELS) != 0 || w % (1 << LEVELS) != 0 {
            return Err(Error::invalid("encode", format!("token map {h}x{w} cannot be halved {LEVELS} times")));
        }
        let mut v = tokens;
        let mut features = Vec::with_capacity(LEVELS);
        for level in &self.encoder {
            let f = level.fno.forward(ctx, v)?;
            features.push(f);
            v = level.down.forward(ctx, f)?;
        }
        Ok(Encoded { latent: v, features })
    }

    /// Mirrors [`encode`](Self::encode) back to token resolution and projects
    /// to frame channels (before `W_NIO`).
    pub fn decode<'a, T: Real>(&self, ctx: Ctx<'a, T>, enc: &Encoded<'a, T>) -> Result<Var<'a, T>> {
        let latent_c = enc.latent.shape()[1];
        if latent_c != self.config.level_channels[LEVELS - 1] {
            return Err(Error::invalid(
                "decode",
                format!("latent has {latent_c} channels, config expects {}", self.config.level_channels[LEVELS - 1]),
            ));
        }
        if self.config.skips && enc.features.len() != LEVELS {
            return Err(Error::invalid("decode", "skips enabled but encoder features are missing"));
        }
        let mut v = enc.latent;
        for (j, level) in self.decoder.iter().enumerate() {
            v = level.up.forward(ctx, v.resample(2, ResampleMode::NearestUp)?)?;
            if self.config.skips {
                v = v.add(enc.features[LEVELS - 1 - j])?;
            }
            v = match &level.block {
                DecoderBlock::Spectral(fno) => fno.forward(ctx, v)?,
                DecoderBlock::Local(conv) => conv.forward(ctx, v)?.gelu(),
            };
        }
        if self.config.token_stride > 1 {
            v = v.resample(self.config.token_stride, ResampleMode::NearestUp)?;
        }
        self.project.forward(ctx, v)
    }

    /// `W_NIO * D(E(C_t(I0, I1)))` on `[B, C, H, W]` frames.
    pub fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<Var<'a, T>> {
        let (_, c, h, w) = i0.value().dims4()?;
        if c != self.channels {
            return Err(Error::invalid(
                "nio_forward",
                format!("frames have {c} channels, model expects {}", self.channels),
            ));
        }
        self.config.check_size(h, w)?;
        let tokens = self.extract_tokens(ctx, i0, i1)?;
        let enc = self.encode(ctx, tokens)?;
        let frame = self.decode(ctx, &enc)?;
        frame.conv2d(ctx.p(self.w_nio), None, 1, 0)
    }
}

/// Shared-weight token extraction; the sum makes it symmetric in `(i0, i1)`.
pub fn extract_tokens<'t, T: Real>(
    i0: Var<'t, T>,
    i1: Var<'t, T>,
    vf: Var<'t, T>,
    bias: Var<'t, T>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    if i0.shape() != i1.shape() {
        return Err(Error::shape("extract_tokens", &i0.shape(), &i1.shape()));
    }
    let a = i0.conv2d(vf, None, stride, padding)?;
    let b = i1.conv2d(vf, None, stride, padding)?;
    a.add(b)?.bias_add(bias)
}
