//! Frame triplets: directory ingestion, exact synthetic generation, crops and
//! normalization.
//!
//! Synthetic frames are sums of a few random sinusoids on the unit torus.
//! Motion is applied as a per-frequency phase rotation of the texture's
//! spectrum, so every frame is exact for any fractional displacement and the
//! middle frame is the true half-way state rather than an approximation.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ifft2, Spectrum};
use crate::tensor::{Real, Tensor};

/// Three consecutive `[C, H, W]` frames in `[0, 1]`; `middle` is the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet<T = f32> {
    pub id: String,
    pub first: Tensor<T>,
    pub middle: Tensor<T>,
    pub last: Tensor<T>,
}

impl<T: Real> Triplet<T> {
    pub fn new(id: impl Into<String>, first: Tensor<T>, middle: Tensor<T>, last: Tensor<T>) -> Result<Self> {
        let id = id.into();
        if first.rank() != 3 || first.shape() != middle.shape() || first.shape() != last.shape() {
            return Err(Error::Dataset(format!(
                "{id}: frames must share one [C, H, W] shape, got {:?}, {:?}, {:?}",
                first.shape(),
                middle.shape(),
                last.shape()
            )));
        }
        Ok(Self { id, first, middle, last })
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.first.shape();
        (s[0], s[1], s[2])
    }

    pub fn cast<U: Real>(&self) -> Triplet<U> {
        Triplet { id: self.id.clone(), first: self.first.cast(), middle: self.middle.cast(), last: self.last.cast() }
    }

    fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        Self { id: self.id.clone(), first: f(&self.first), middle: f(&self.middle), last: f(&self.last) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    /// The whole texture moves with one velocity.
    Translate,
    /// Every sinusoid drifts with its own velocity.
    RotatePhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub count: usize,
    pub resolution: usize,
    pub channels: usize,
    pub motion: Motion,
    /// Largest displacement between consecutive frames, in pixels.
    pub max_displacement: f64,
    /// Highest spatial frequency as a fraction of Nyquist, in `(0, 1]`.
    pub band_limit: f64,
    /// Sinusoids per channel, at most 8.
    pub components: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 100,
            resolution: 64,
            channels: 1,
            motion: Motion::Translate,
            max_displacement: 1.0,
            band_limit: 0.25,
            components: 8,
        }
    }
}

pub const MAX_COMPONENTS: usize = 8;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.resolution < 4 {
            return fail(format!("resolution {} is below 4", self.resolution));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if !(self.band_limit > 0.0 && self.band_limit <= 1.0) {
            return fail(format!("band limit {} is outside (0, 1]", self.band_limit));
        }
        if !(self.max_displacement >= 0.0 && self.max_displacement <= self.resolution as f64 / 4.0) {
            return fail(format!("max displacement {} exceeds resolution / 4", self.max_displacement));
        }
        if self.components == 0 || self.components > MAX_COMPONENTS {
            return fail(format!("components must be in 1..={MAX_COMPONENTS}"));
        }
        if self.frequencies().is_empty() {
            return fail("band limit admits no nonzero frequency".into());
        }
        Ok(())
    }

    /// Admissible integer frequencies `(f1, f2)`: nonzero, strictly below
    /// Nyquist, within the band limit, one representative per `+-f` pair.
    fn frequencies(&self) -> Vec<(i64, i64)> {
        let half = self.resolution as f64 / 2.0;
        let lim = (self.band_limit * half).min(half - 1e-9);
        let top = lim.floor() as i64;
        let mut out = Vec::new();
        for f1 in -top..=top {
            for f2 in 0..=top {
                if (f2 == 0 && f1 <= 0) || f1.unsigned_abs() as f64 >= half || f2 as f64 >= half {
                    continue;
                }
                out.push((f1, f2));
            }
        }
        out
    }
}

/// One sinusoid `amp * cos(2 pi (f1 y / H + f2 x / W) + phase)` with its own
/// velocity in pixels per frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub channel: usize,
    pub f1: i64,
    pub f2: i64,
    pub amp: f64,
    pub phase: f64,
    pub velocity: (f64, f64),
}

/// A periodic band-limited texture mapped affinely into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub channels: usize,
    pub resolution: usize,
    pub components: Vec<Component>,
    /// Per-channel sum of amplitudes; the frame value is `0.5 + 0.5 * s / norm`.
    pub norm: Vec<f64>,
}

impl Texture {
    fn random(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let freqs = spec.frequencies();
        let mut velocity = || {
            let r = spec.max_displacement * rng.gen::<f64>();
            let a = 2.0 * PI * rng.gen::<f64>();
            (r * a.sin(), r * a.cos())
        };
        let shared = velocity();
        let per_component: Vec<_> = (0..spec.channels * spec.components).map(|_| velocity()).collect();
        let mut components = Vec::new();
        let mut norm = vec![0.0; spec.channels];
        for c in 0..spec.channels {
            let n = rng.gen_range(1..=spec.components).min(freqs.len());
            for (i, &(f1, f2)) in freqs.choose_multiple(rng, n).enumerate() {
                let amp = rng.gen_range(0.2..1.0);
                norm[c] += amp;
                components.push(Component {
                    channel: c,
                    f1,
                    f2,
                    amp,
                    phase: 2.0 * PI * rng.gen::<f64>(),
                    velocity: match spec.motion {
                        Motion::Translate => shared,
                        Motion::RotatePhase => per_component[c * spec.components + i],
                    },
                });
            }
        }
        Self { channels: spec.channels, resolution: spec.resolution, components, norm }
    }

    /// Direct evaluation at time `t` on an `h x w` grid covering the same
    /// torus; displacements are in units of the base resolution's pixels.
    pub fn evaluate(&self, t: f64, h: usize, w: usize) -> Tensor<f64> {
        let n = self.resolution as f64;
        let (sy, sx) = (n / h as f64, n / w as f64);
        let mut out = Tensor::full(&[self.channels, h, w], 0.5);
        for comp in &self.components {
            let scale = 0.5 * comp.amp / self.norm[comp.channel];
            let plane = &mut out.data_mut()[comp.channel * h * w..][..h * w];
            for y in 0..h {
                for x in 0..w {
                    let py = y as f64 * sy - t * comp.velocity.0;
                    let px = x as f64 * sx - t * comp.velocity.1;
                    let arg = 2.0 * PI * (comp.f1 as f64 * py + comp.f2 as f64 * px) / n + comp.phase;
                    plane[y * w + x] += scale * arg.cos();
                }
            }
        }
        out
    }

    /// Whether an `h x w` grid resolves every component below its Nyquist.
    pub fn resolved_by(&self, h: usize, w: usize) -> bool {
        self.components.iter().all(|c| 2 * c.f1.unsigned_abs() < h as u64 && 2 * c.f2.unsigned_abs() < w as u64)
    }

    /// The texture's half spectrum at time `t` on an `h x w` grid, built by
    /// rotating each component's coefficient by its displacement phase.
    pub fn spectrum_at(&self, t: f64, h: usize, w: usize) -> Result<Spectrum<f64>> {
        if !self.resolved_by(h, w) {
            return Err(Error::invalid("texture", format!("a {h}x{w} grid aliases this texture")));
        }
        let nf = self.resolution as f64;
        let area = (h * w) as f64;
        let mut s = Spectrum::zeros(&[self.channels], h, w);
        for c in 0..self.channels {
            s.set(c, 0, 0, Complex::new(0.5 * area, 0.0));
        }
        for comp in &self.components {
            let scale = 0.5 * comp.amp / self.norm[comp.channel];
            let shift = -2.0 * PI * t * (comp.f1 as f64 * comp.velocity.0 + comp.f2 as f64 * comp.velocity.1) / nf;
            // cos(theta) = (e^{i theta} + e^{-i theta}) / 2. Interior columns
            // stand for both +f and -f; column 0 stores the pair explicitly.
            let z = Complex::from_polar(0.5 * scale * area, comp.phase + shift);
            let c = comp.channel;
            let k1 = comp.f1.rem_euclid(h as i64) as usize;
            let k2 = comp.f2 as usize;
            s.set(c, k1, k2, s.get(c, k1, k2) + z);
            if comp.f2 == 0 {
                let km = (-comp.f1).rem_euclid(h as i64) as usize;
                s.set(c, km, 0, s.get(c, km, 0) + z.conj());
            }
        }
        Ok(s)
    }

    /// Frame at time `t` on an `h x w` grid, through the inverse transform
    /// of [`spectrum_at`](Self::spectrum_at).
    pub fn frame_at(&self, t: f64, h: usize, w: usize) -> Result<Tensor<f64>> {
        Ok(ifft2(&self.spectrum_at(t, h, w)?))
    }

    /// Frame at time `t` on the base grid.
    pub fn frame(&self, t: f64) -> Tensor<f64> {
        let n = self.resolution;
        self.frame_at(t, n, n).expect("base grid resolves its own texture")
    }
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The texture behind item `index` of `spec`.
pub fn texture(spec: &SyntheticSpec, index: usize) -> Texture {
    Texture::random(spec, &mut item_rng(spec.seed, index))
}

/// Triplets `(t = -1, 0, +1)`, ids `syn_00000`, ...
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<Triplet<f64>>> {
    spec.validate()?;
    (0..spec.count)
        .map(|i| {
            let tex = texture(spec, i);
            Triplet::new(format!("syn_{i:05}"), tex.frame(-1.0), tex.frame(0.0), tex.frame(1.0))
        })
        .collect()
}

/// A run of equally spaced frames from one texture.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<T = f32> {
    pub id: String,
    pub frames: Vec<Tensor<T>>,
}

impl<T: Real> Sequence<T> {
    pub fn cast<U: Real>(&self) -> Sequence<U> {
        Sequence { id: self.id.clone(), frames: self.frames.iter().map(Tensor::cast).collect() }
    }
}

/// `length` consecutive frames per item, centred on `t = 0`.
pub fn gen_sequences(spec: &SyntheticSpec, length: usize) -> Result<Vec<Sequence<f64>>> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::Config("sequence length must be >= 1".into()));
    }
    let center = (length - 1) as f64 / 2.0;
    Ok((0..spec.count)
        .map(|i| {
            let tex = texture(spec, i);
            Sequence { id: format!("seq_{i:05}"), frames: (0..length).map(|t| tex.frame(t as f64 - center)).collect() }
        })
        .collect())
}

/// `(x - min) / (max - min)`; a constant input maps to zeros.
pub fn minmax_normalize<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (x.min(), x.max());
    if !(hi > lo) {
        return Tensor::zeros(x.shape());
    }
    let span = hi - lo;
    x.map(|v| (v - lo) / span)
}

/// Crops the same `side x side` window from all three frames.
pub fn random_crop<T: Real, R: Rng>(t: &Triplet<T>, side: usize, rng: &mut R) -> Result<Triplet<T>> {
    let (_, h, w) = t.dims();
    if side == 0 || side > h.min(w) {
        return Err(Error::invalid("random_crop", format!("crop side {side} does not fit a {h}x{w} frame")));
    }
    let top = rng.gen_range(0..=h - side);
    let left = rng.gen_range(0..=w - side);
    Ok(t.map(|f| crop(f, top, left, side, side)))
}

/// Window `[top, top + ch) x [left, left + cw)` of a `[C, H, W]` tensor.
pub fn crop<T: Real>(x: &Tensor<T>, top: usize, left: usize, ch: usize, cw: usize) -> Tensor<T> {
    let s = x.shape();
    let (c, w) = (s[0], s[2]);
    let d = x.data();
    let mut out = Vec::with_capacity(c * ch * cw);
    for ci in 0..c {
        for y in top..top + ch {
            let row = (ci * s[1] + y) * w;
            out.extend_from_slice(&d[row + left..row + left + cw]);
        }
    }
    Tensor::new(&[c, ch, cw], out).expect("crop shape")
}

/// Decodes an 8-bit PNG or NetPBM image to `[C, H, W]` in `[0, 1]`:
/// grayscale gives one channel, anything else three.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if gray {
        let buf = img.to_luma8();
        Tensor::new(&[1, h, w], buf.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
    } else {
        let buf = img.to_rgb8();
        let raw = buf.as_raw();
        Ok(Tensor::from_fn(&[3, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            raw[p * 3 + c] as f32 / 255.0
        }))
    }
}

fn quantize<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let s = x.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::invalid("write_image", format!("expected [1|3, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut buf = vec![0u8; c * h * w];
    for ci in 0..c {
        for p in 0..h * w {
            let v = x.data()[ci * h * w + p].as_f64().clamp(0.0, 1.0);
            buf[p * c + ci] = (v * 255.0).round() as u8;
        }
    }
    Ok((c, h, w, buf))
}

/// Writes a `[1|3, H, W]` frame as 8-bit PNG, or NetPBM when the extension
/// is `pgm`/`ppm`. Values are clamped to `[0, 1]`.
pub fn write_image<T: Real>(path: &Path, x: &Tensor<T>) -> Result<()> {
    let (c, h, w, buf) = quantize(x)?;
    let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm" | "ppm" | "pnm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    image::save_buffer_with_format(path, &buf, w as u32, h as u32, color, format)
        .map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })
}

/// One sequence directory that failed to load.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub triplets: Vec<Triplet<f32>>,
    pub skipped: Vec<Skipped>,
}

pub const FRAME_NAMES: [&str; 3] = ["im1.png", "im2.png", "im3.png"];

/// Reads `<root>/<id>/im{1,2,3}.png` for every subdirectory, in
/// lexicographic order of `id`. Undecodable sequences are skipped and listed.
pub fn load_triplets(root: &Path) -> Result<Loaded> {
    let mut dirs = BTreeSet::new();
    for entry in fs::read_dir(root).map_err(|e| Error::Dataset(format!("{}: {e}", root.display())))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("{} contains no sequence directories", root.display())));
    }
    let mut triplets = Vec::new();
    let mut skipped = Vec::new();
    for id in dirs {
        let dir = root.join(&id);
        let frames: Result<Vec<_>> = FRAME_NAMES.iter().map(|n| read_image(&dir.join(n))).collect();
        match frames.and_then(|mut f| {
            let last = f.pop().expect("three frames");
            let middle = f.pop().expect("three frames");
            let first = f.pop().expect("three frames");
            Triplet::new(id.clone(), first, middle, last)
        }) {
            Ok(t) => triplets.push(t),
            Err(e) => skipped.push(Skipped { id, reason: e.to_string() }),
        }
    }
    Ok(Loaded { triplets, skipped })
}

pub const MANIFEST: &str = "manifest.json";

/// Writes each triplet to `<root>/<id>/im{1,2,3}.png` and `manifest` to
/// `<root>/manifest.json`.
pub fn materialize<T: Real, M: Serialize>(root: &Path, triplets: &[Triplet<T>], manifest: &M) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(root)?;
    let mut dirs = Vec::with_capacity(triplets.len());
    for t in triplets {
        let dir = root.join(&t.id);
        fs::create_dir_all(&dir)?;
        for (name, frame) in FRAME_NAMES.iter().zip([&t.first, &t.middle, &t.last]) {
            write_image(&dir.join(name), frame)?;
        }
        dirs.push(dir);
    }
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Dataset(e.to_string()))?;
    fs::write(root.join(MANIFEST), text + "\n")?;
    Ok(dirs)
}
