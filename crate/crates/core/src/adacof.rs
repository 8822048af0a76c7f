//! Adaptive collaboration of flows: every output pixel is a weighted sum of
//! `F x F` bilinear samples from an input frame, each tap displaced by its own
//! learned offset.
//!
//! A ReLU U-Net over the concatenated frames feeds seven heads: kernel
//! weights, vertical offsets and horizontal offsets for each frame, plus an
//! occlusion mask that blends the two warped frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx};
use crate::ops::ResampleMode;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaCofConfig {
    /// Taps per side; must be odd.
    pub kernel_size: usize,
    pub dilation: usize,
    /// U-Net output width.
    pub width: usize,
    pub head_width: usize,
}

impl Default for AdaCofConfig {
    fn default() -> Self {
        Self { kernel_size: 5, dilation: 1, width: 64, head_width: 16 }
    }
}

/// Frame sides must be multiples of this.
pub const SIZE_MULTIPLE: usize = 8;

impl AdaCofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("adacof.kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.dilation == 0 {
            return Err(Error::Config("adacof.dilation must be >= 1".into()));
        }
        if self.width < 4 || !self.width.is_multiple_of(4) || self.head_width == 0 {
            return Err(Error::Config(format!(
                "adacof.width must be a positive multiple of 4 and head_width >= 1, got {} and {}",
                self.width, self.head_width
            )));
        }
        Ok(())
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let ok = |s: usize| s > 0 && s.is_multiple_of(SIZE_MULTIPLE);
        if ok(height) && ok(width) {
            return Ok(());
        }
        let up = |s: usize| s.div_ceil(SIZE_MULTIPLE).max(1) * SIZE_MULTIPLE;
        Err(Error::Inadmissible {
            pathway: "adacof",
            height,
            width,
            reason: format!("sides must be positive multiples of {SIZE_MULTIPLE}"),
            suggest_h: up(height),
            suggest_w: up(width),
        })
    }

    /// Exact trainable scalar count for frames with `c` channels.
    pub fn parameter_count(&self, c: usize) -> usize {
        let (w, q, h) = (self.width, self.width / 4, self.head_width);
        let unet = Conv2d::count(2 * c, q, 3, true)
            + Conv2d::count(q, 2 * q, 3, true)
            + Conv2d::count(2 * q, w, 3, true)
            + Conv2d::count(w, w, 3, true)
            + Conv2d::count(w, w, 3, true)
            + Conv2d::count(w, 2 * q, 3, true)
            + Conv2d::count(2 * q, q, 3, true)
            + Conv2d::count(q, w, 3, true);
        let head = |out: usize| Conv2d::count(w, h, 3, true) + Conv2d::count(h, out, 3, true);
        unet + 6 * head(self.taps()) + head(1)
    }
}

/// Per-pixel kernel weights and offsets for one input frame, each `[B, F*F, H, W]`.
#[derive(Clone, Copy)]
pub struct AdaCofField<'t, T> {
    pub weights: Var<'t, T>,
    pub alpha: Var<'t, T>,
    pub beta: Var<'t, T>,
}

/// The two per-frame fields and the `[B, 1, H, W]` occlusion mask in `[0, 1]`.
pub struct AdaCofFields<'t, T> {
    pub frame0: AdaCofField<'t, T>,
    pub frame1: AdaCofField<'t, T>,
    pub occlusion: Var<'t, T>,
}

struct Tap {
    row: isize,
    col: isize,
}

fn taps(kernel: usize, dilation: usize) -> Vec<Tap> {
    let r = (kernel / 2) as isize;
    let d = dilation as isize;
    let mut out = Vec::with_capacity(kernel * kernel);
    for i in -r..=r {
        for j in -r..=r {
            out.push(Tap { row: d * i, col: d * j });
        }
    }
    out
}

/// Bilinear corners of a fractional position: `(row, col, weight)` for the
/// in-bounds ones, plus the fractional parts.
#[inline]
fn corners<T: Real>(y: T, x: T, h: usize, w: usize) -> ([(usize, usize, T); 4], usize, T, T) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (yi, xi) = (y0.as_f64() as isize, x0.as_f64() as isize);
    let one = T::one();
    let cand = [
        (yi, xi, (one - fy) * (one - fx)),
        (yi, xi + 1, (one - fy) * fx),
        (yi + 1, xi, fy * (one - fx)),
        (yi + 1, xi + 1, fy * fx),
    ];
    let mut out = [(0, 0, T::zero()); 4];
    let mut n = 0;
    for (r, c, wt) in cand {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            out[n] = (r as usize, c as usize, wt);
            n += 1;
        }
    }
    (out, n, fy, fx)
}

/// Reads `img` at integer `(r, c)`, zero outside.
#[inline]
fn at<T: Real>(img: &[T], r: isize, c: isize, h: usize, w: usize) -> T {
    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
        img[r as usize * w + c as usize]
    } else {
        T::zero()
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Warps `[B, C, H, W]` frames with `[B, F*F, H, W]` weights and
    /// vertical/horizontal offsets. Samples outside the frame read zero.
    pub fn adacof_warp(
        self,
        weights: Var<'t, T>,
        alpha: Var<'t, T>,
        beta: Var<'t, T>,
        kernel_size: usize,
        dilation: usize,
    ) -> Result<Var<'t, T>> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("adacof_warp", format!("kernel size must be odd, got {kernel_size}")));
        }
        if dilation == 0 {
            return Err(Error::invalid("adacof_warp", "dilation must be >= 1"));
        }
        let (img, wt, al, be) = (self.value(), weights.value(), alpha.value(), beta.value());
        let (b, c, h, w) = img.dims4()?;
        let k = kernel_size * kernel_size;
        let field_shape = [b, k, h, w];
        for f in [&wt, &al, &be] {
            if f.shape() != field_shape {
                return Err(Error::shape("adacof_warp", &field_shape, f.shape()));
            }
        }
        let stencil = taps(kernel_size, dilation);
        let hw = h * w;
        let mut out = vec![T::zero(); b * c * hw];
        for bi in 0..b {
            for (ki, tap) in stencil.iter().enumerate() {
                let fo = (bi * k + ki) * hw;
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let sy = T::of((y as isize + tap.row) as f64) + al.data()[fo + p];
                        let sx = T::of((x as isize + tap.col) as f64) + be.data()[fo + p];
                        let (cs, n, _, _) = corners(sy, sx, h, w);
                        let wk = wt.data()[fo + p];
                        for ci in 0..c {
                            let plane = &img.data()[(bi * c + ci) * hw..][..hw];
                            let mut s = T::zero();
                            for &(r, cc, cw) in &cs[..n] {
                                s += cw * plane[r * w + cc];
                            }
                            out[(bi * c + ci) * hw + p] += wk * s;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[b, c, h, w], out)?;
        Ok(self.tape().record(out, &[self, weights, alpha, beta], move |g| {
            let gd = g.data();
            let mut g_img = vec![T::zero(); img.len()];
            let mut g_w = vec![T::zero(); wt.len()];
            let mut g_a = vec![T::zero(); al.len()];
            let mut g_b = vec![T::zero(); be.len()];
            for bi in 0..b {
                for (ki, tap) in stencil.iter().enumerate() {
                    let fo = (bi * k + ki) * hw;
                    for y in 0..h {
                        for x in 0..w {
                            let p = y * w + x;
                            let sy = T::of((y as isize + tap.row) as f64) + al.data()[fo + p];
                            let sx = T::of((x as isize + tap.col) as f64) + be.data()[fo + p];
                            let (cs, n, fy, fx) = corners(sy, sx, h, w);
                            let (r0, c0) = (sy.floor().as_f64() as isize, sx.floor().as_f64() as isize);
                            let wk = wt.data()[fo + p];
                            let (mut dw, mut da, mut db) = (T::zero(), T::zero(), T::zero());
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                let plane = &img.data()[base..][..hw];
                                let go = gd[base + p];
                                let mut s = T::zero();
                                for &(r, cc, cw) in &cs[..n] {
                                    s += cw * plane[r * w + cc];
                                    g_img[base + r * w + cc] += go * wk * cw;
                                }
                                dw += go * s;
                                let v00 = at(plane, r0, c0, h, w);
                                let v01 = at(plane, r0, c0 + 1, h, w);
                                let v10 = at(plane, r0 + 1, c0, h, w);
                                let v11 = at(plane, r0 + 1, c0 + 1, h, w);
                                let one = T::one();
                                let dy = (one - fx) * (v10 - v00) + fx * (v11 - v01);
                                let dx = (one - fy) * (v01 - v00) + fy * (v11 - v10);
                                da += go * wk * dy;
                                db += go * wk * dx;
                            }
                            g_w[fo + p] += dw;
                            g_a[fo + p] += da;
                            g_b[fo + p] += db;
                        }
                    }
                }
            }
            let t = |shape: &[usize], d: Vec<T>| Some(Tensor::new(shape, d).expect("adacof grad"));
            vec![t(&[b, c, h, w], g_img), t(&field_shape, g_w), t(&field_shape, g_a), t(&field_shape, g_b)]
        }))
    }
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Conv2d,
    out: Conv2d,
}

impl Head {
    fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        width: usize,
        hidden: usize,
        out: usize,
    ) -> Self {
        Self {
            hidden: Conv2d::new(store, rng, &format!("{name}.hidden"), width, hidden, 3, 1, true),
            out: Conv2d::new(store, rng, &format!("{name}.out"), hidden, out, 3, 1, true),
        }
    }

    fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        self.out.forward(ctx, self.hidden.forward(ctx, x)?.relu())
    }
}

#[derive(Clone, Debug)]
struct FrameHeads {
    weights: Head,
    alpha: Head,
    beta: Head,
}

#[derive(Clone, Debug)]
pub struct AdaCofNet {
    pub config: AdaCofConfig,
    pub channels: usize,
    down: [Conv2d; 4],
    up: [Conv2d; 3],
    out: Conv2d,
    heads: [FrameHeads; 2],
    occlusion: Head,
}

impl AdaCofNet {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        prefix: &str,
        config: &AdaCofConfig,
        c: usize,
    ) -> Result<Self> {
        config.validate()?;
        if c == 0 {
            return Err(Error::Config("frame channels must be >= 1".into()));
        }
        let (w, q) = (config.width, config.width / 4);
        let mut conv = |name: &str, cin: usize, cout: usize, stride: usize| {
            Conv2d::new(store, rng, &format!("{prefix}.unet.{name}"), cin, cout, 3, stride, true)
        };
        let down = [
            conv("down0", 2 * c, q, 1),
            conv("down1", q, 2 * q, 2),
            conv("down2", 2 * q, w, 2),
            conv("down3", w, w, 2),
        ];
        let up = [conv("up2", w, w, 1), conv("up1", w, 2 * q, 1), conv("up0", 2 * q, q, 1)];
        let out = conv("out", q, w, 1);
        let taps = config.taps();
        let hw = config.head_width;
        let mut frame = |f: usize| FrameHeads {
            weights: Head::new(store, rng, &format!("{prefix}.frame{f}.weights"), w, hw, taps),
            alpha: Head::new(store, rng, &format!("{prefix}.frame{f}.alpha"), w, hw, taps),
            beta: Head::new(store, rng, &format!("{prefix}.frame{f}.beta"), w, hw, taps),
        };
        let heads = [frame(0), frame(1)];
        let occlusion = Head::new(store, rng, &format!("{prefix}.occlusion"), w, hw, 1);
        Ok(Self { config: config.clone(), channels: c, down, up, out, heads, occlusion })
    }

    fn check_frames<'a, T: Real>(&self, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<()> {
        if i0.shape() != i1.shape() {
            return Err(Error::shape("adacof", &i0.shape(), &i1.shape()));
        }
        let (_, c, h, w) = i0.value().dims4()?;
        if c != self.channels {
            return Err(Error::invalid("adacof", format!("frames have {c} channels, model expects {}", self.channels)));
        }
        self.config.check_size(h, w)
    }

    /// `[B, width, H, W]` features of the concatenated frames.
    pub fn unet_features<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<Var<'a, T>> {
        self.check_frames(i0, i1)?;
        let x = Var::concat_channels(&[i0, i1])?;
        let e0 = self.down[0].forward(ctx, x)?.relu();
        let e1 = self.down[1].forward(ctx, e0)?.relu();
        let e2 = self.down[2].forward(ctx, e1)?.relu();
        let e3 = self.down[3].forward(ctx, e2)?.relu();
        let mut v = e3;
        for (conv, skip) in self.up.iter().zip([e2, e1, e0]) {
            v = conv.forward(ctx, v.resample(2, ResampleMode::NearestUp)?)?.relu().add(skip)?;
        }
        Ok(self.out.forward(ctx, v)?.relu())
    }

    pub fn kernel_subnets<'a, T: Real>(&self, ctx: Ctx<'a, T>, features: Var<'a, T>) -> Result<AdaCofFields<'a, T>> {
        let field = |h: &FrameHeads| -> Result<AdaCofField<'a, T>> {
            Ok(AdaCofField {
                weights: h.weights.forward(ctx, features)?.softmax_channels()?,
                alpha: h.alpha.forward(ctx, features)?,
                beta: h.beta.forward(ctx, features)?,
            })
        };
        Ok(AdaCofFields {
            frame0: field(&self.heads[0])?,
            frame1: field(&self.heads[1])?,
            occlusion: self.occlusion.forward(ctx, features)?.sigmoid(),
        })
    }

    pub fn fields<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<AdaCofFields<'a, T>> {
        let feats = self.unet_features(ctx, i0, i1)?;
        self.kernel_subnets(ctx, feats)
    }

    /// `occ * warp(I0) + (1 - occ) * warp(I1)` for given fields.
    pub fn synthesize<'a, T: Real>(
        &self,
        i0: Var<'a, T>,
        i1: Var<'a, T>,
        f: &AdaCofFields<'a, T>,
    ) -> Result<Var<'a, T>> {
        let (k, d) = (self.config.kernel_size, self.config.dilation);
        blend_warps(i0, i1, f, k, d)
    }

    pub fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, i0: Var<'a, T>, i1: Var<'a, T>) -> Result<Var<'a, T>> {
        let f = self.fields(ctx, i0, i1)?;
        self.synthesize(i0, i1, &f)
    }
}

/// `occ * warp(I0, f0) + (1 - occ) * warp(I1, f1)`; the single-channel mask
/// is broadcast over frame channels.
pub fn blend_warps<'a, T: Real>(
    i0: Var<'a, T>,
    i1: Var<'a, T>,
    f: &AdaCofFields<'a, T>,
    kernel_size: usize,
    dilation: usize,
) -> Result<Var<'a, T>> {
    let w0 = i0.adacof_warp(f.frame0.weights, f.frame0.alpha, f.frame0.beta, kernel_size, dilation)?;
    let w1 = i1.adacof_warp(f.frame1.weights, f.frame1.alpha, f.frame1.beta, kernel_size, dilation)?;
    let c = w0.shape()[1];
    let occ = Var::concat_channels(&vec![f.occlusion; c])?;
    let rest = occ.scale(-T::one()).add_scalar(T::one());
    w0.mul(occ)?.add(w1.mul(rest)?)
}
