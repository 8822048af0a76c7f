//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grads;

use adafnio_core::spectral::{fft2, retained_row_to_k1, SpectralModes, SpectralWeights};
use adafnio_core::Tensor;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct double-sum DFT of one real plane, full spectrum, row-major.
pub fn naive_dft(x: &[f64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for k1 in 0..h {
        for k2 in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for n1 in 0..h {
                for n2 in 0..w {
                    let phase = sign * 2.0 * PI * ((k1 * n1) as f64 / h as f64 + (k2 * n2) as f64 / w as f64);
                    acc += x[n1 * w + n2] * Complex64::from_polar(1.0, phase);
                }
            }
            out[k1 * w + k2] = acc;
        }
    }
    out
}

pub fn naive_idft(z: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for n1 in 0..h {
        for n2 in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for k1 in 0..h {
                for k2 in 0..w {
                    let phase = 2.0 * PI * ((k1 * n1) as f64 / h as f64 + (k2 * n2) as f64 / w as f64);
                    acc += z[k1 * w + k2] * Complex64::from_polar(1.0, phase);
                }
            }
            out[n1 * w + n2] = acc / (h * w) as f64;
        }
    }
    out
}

pub fn circular_conv(x: &[f64], k: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut y = vec![0.0; h * w];
    for n1 in 0..h {
        for n2 in 0..w {
            let mut acc = 0.0;
            for m1 in 0..h {
                for m2 in 0..w {
                    acc += k[m1 * w + m2] * x[((n1 + h - m1) % h) * w + (n2 + w - m2) % w];
                }
            }
            y[n1 * w + n2] = acc;
        }
    }
    y
}

/// R filled with the kernel's transform at full modes.
pub fn weights_from_kernel(kernel: &Tensor<f64>, h: usize, w: usize) -> SpectralWeights<f64> {
    let modes = SpectralModes::new(h / 2, w / 2);
    let k_hat = fft2(kernel).unwrap();
    let shape = modes.weight_shape(1, 1);
    let mut re = Tensor::zeros(&shape);
    let mut im = Tensor::zeros(&shape);
    for r in 0..shape[0] {
        let k1 = retained_row_to_k1(r, modes.modes1, h);
        for k2 in 0..shape[1] {
            let z = k_hat.get(0, k1, k2);
            re.data_mut()[r * shape[1] + k2] = z.re;
            im.data_mut()[r * shape[1] + k2] = z.im;
        }
    }
    SpectralWeights::new(modes, re, im).unwrap()
}

/// Real band-limited field: frequencies with |f1| < m1 and |f2| < m2 on the
/// unit torus, sampled on an `h x w` grid.
pub struct BandLimited {
    pub terms: Vec<(i64, i64, f64, f64)>,
}

impl BandLimited {
    pub fn random(m1: i64, m2: i64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for f1 in -(m1 - 1)..m1 {
            for f2 in 0..m2 {
                terms.push((f1, f2, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
        }
        Self { terms }
    }

    pub fn sample(&self, channels: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[channels, h, w], |i| {
            let c = (i / (h * w)) as f64;
            let (n1, n2) = ((i / w % h) as f64, (i % w) as f64);
            self.terms
                .iter()
                .map(|&(f1, f2, a, b)| {
                    let t = 2.0 * PI * (f1 as f64 * n1 / h as f64 + f2 as f64 * n2 / w as f64) + c;
                    a * t.cos() + b * t.sin()
                })
                .sum()
        })
    }
}

/// Trigonometric interpolation of a real periodic plane onto a finer grid,
/// using the naive DFT and signed frequencies below the source Nyquist.
pub fn trig_upsample(x: &[f64], h: usize, w: usize, h2: usize, w2: usize) -> Vec<f64> {
    let spec = naive_dft(x, h, w, false);
    let signed = |k: usize, n: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let mut out = vec![0.0; h2 * w2];
    for n1 in 0..h2 {
        for n2 in 0..w2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for k1 in 0..h {
                for k2 in 0..w {
                    let phase =
                        2.0 * PI * (signed(k1, h) * n1 as f64 / h2 as f64 + signed(k2, w) * n2 as f64 / w2 as f64);
                    acc += spec[k1 * w + k2] * Complex64::from_polar(1.0, phase);
                }
            }
            out[n1 * w2 + n2] = acc.re / (h * w) as f64;
        }
    }
    out
}

/// SSIM by explicit per-window sums with a 2-D Gaussian, no separability.
pub fn ssim_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut g = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor<f64>, y: usize, x: usize| t.data()[(ch * h + y) * w + x];
        let mut sum = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i][j] / total;
                        let (p, q) = (at(a, y0 + i, x0 + j), at(b, y0 + i, x0 + j));
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        acc += sum / ((h - 10) * (w - 10)) as f64;
    }
    acc / c as f64
}

/// `f x f` box average of one `[C, H, W]` frame at interior pixel `(y, x)`.
pub fn box_blur_at(img: &Tensor<f64>, ch: usize, y: usize, x: usize, f: usize) -> f64 {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let r = f / 2;
    let mut s = 0.0;
    for dy in 0..f {
        for dx in 0..f {
            s += img.data()[(ch * h + y + dy - r) * w + x + dx - r];
        }
    }
    s / (f * f) as f64
}
