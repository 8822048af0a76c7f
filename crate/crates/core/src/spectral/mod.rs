//! Discrete 2-D Fourier transforms, mode truncation and spectral (global)
//! convolution.
//!
//! Real inputs are stored in Hermitian form: for an `H x W` grid only the
//! columns `k2 in [0, W/2]` are kept. The forward transform carries no
//! normalization; the inverse divides by `H * W`, so `ifft2(fft2(x)) == x`.

mod conv;
mod fft;
mod layer;

pub use conv::{check_mode_cap, retained_row_to_k1, SpectralModes, SpectralWeights};
pub use fft::{FftPlan, Plan2};
pub use layer::{fno_layer, FnoLayer};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Half spectrum of a stack of real planes, indexed `(channel, k1, k2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    coeffs: Vec<Complex<T>>,
    lead_shape: Vec<usize>,
    height: usize,
    width: usize,
}

impl<T: Real> Spectrum<T> {
    pub fn new(coeffs: Vec<Complex<T>>, lead_shape: &[usize], height: usize, width: usize) -> Result<Self> {
        let channels: usize = lead_shape.iter().product();
        let want = channels * height * (width / 2 + 1);
        if coeffs.len() != want || height == 0 || width == 0 {
            return Err(Error::invalid(
                "spectrum",
                format!(
                    "{} coefficients do not fit {channels} channels of a {height}x{width} grid ({want} expected)",
                    coeffs.len()
                ),
            ));
        }
        Ok(Self { coeffs, lead_shape: lead_shape.to_vec(), height, width })
    }

    pub fn zeros(lead_shape: &[usize], height: usize, width: usize) -> Self {
        let channels: usize = lead_shape.iter().product();
        Self {
            coeffs: vec![Complex::new(T::zero(), T::zero()); channels * height * (width / 2 + 1)],
            lead_shape: lead_shape.to_vec(),
            height,
            width,
        }
    }

    /// `(H, W)` of the spatial grid the spectrum came from.
    pub fn source_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.lead_shape.iter().product()
    }

    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    /// Coefficients per channel, `H * (floor(W/2) + 1)`.
    pub fn coeffs_per_channel(&self) -> usize {
        self.height * self.half_width()
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn get(&self, channel: usize, k1: usize, k2: usize) -> Complex<T> {
        self.coeffs[(channel * self.height + k1) * self.half_width() + k2]
    }

    pub fn set(&mut self, channel: usize, k1: usize, k2: usize, v: Complex<T>) {
        let wh = self.half_width();
        self.coeffs[(channel * self.height + k1) * wh + k2] = v;
    }

    /// Expands to the full `H x W` spectrum per channel using conjugate
    /// symmetry. Self-conjugate columns are projected onto their Hermitian
    /// part, which is what the real inverse transform sees.
    pub fn to_full(&self) -> Vec<Complex<T>> {
        let (h, w, wh) = (self.height, self.width, self.half_width());
        let half = T::of(0.5);
        let mut full = vec![Complex::new(T::zero(), T::zero()); self.channels() * h * w];
        for c in 0..self.channels() {
            let dst = &mut full[c * h * w..(c + 1) * h * w];
            for k1 in 0..h {
                let m1 = (h - k1) % h;
                for k2 in 0..wh {
                    let v = self.get(c, k1, k2);
                    let self_conj = k2 == 0 || (w % 2 == 0 && k2 == w / 2);
                    if self_conj {
                        let mirror = self.get(c, m1, k2).conj();
                        dst[k1 * w + k2] = (v + mirror) * half;
                    } else {
                        dst[k1 * w + k2] = v;
                        dst[m1 * w + (w - k2)] = v.conj();
                    }
                }
            }
        }
        full
    }
}

fn split_planes<T: Real>(x: &Tensor<T>) -> Result<(Vec<usize>, usize, usize)> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::invalid("fft2", format!("need at least a 2-D grid, got shape {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == 0 || w == 0 {
        return Err(Error::invalid("fft2", "grid sides must be >= 1"));
    }
    Ok((shape[..shape.len() - 2].to_vec(), h, w))
}

/// Unnormalized forward transform of every trailing `H x W` plane.
pub fn fft2<T: Real>(x: &Tensor<T>) -> Result<Spectrum<T>> {
    let (lead, h, w) = split_planes(x)?;
    let plan = Plan2::new(h, w);
    let wh = plan.half_width();
    let channels: usize = lead.iter().product();
    let mut coeffs = vec![Complex::new(T::zero(), T::zero()); channels * h * wh];
    for (src, dst) in x.data().chunks(h * w).zip(coeffs.chunks_mut(h * wh)) {
        plan.rfft2(src, dst);
    }
    Spectrum::new(coeffs, &lead, h, w)
}

/// Inverse transform with the `1/(H*W)` factor; the result is real.
pub fn ifft2<T: Real>(s: &Spectrum<T>) -> Tensor<T> {
    let (h, w) = s.source_shape();
    let plan = Plan2::new(h, w);
    let wh = plan.half_width();
    let mut out = vec![T::zero(); s.channels() * h * w];
    for (src, dst) in s.coeffs.chunks(h * wh).zip(out.chunks_mut(h * w)) {
        plan.irfft2(src, dst);
    }
    let mut shape = s.lead_shape.clone();
    shape.extend_from_slice(&[h, w]);
    Tensor::new(&shape, out).expect("ifft2 output shape")
}

/// Inverse of a full complex `channels x H x W` spectrum, `1/(H*W)` included.
/// Used to measure the imaginary residue that [`ifft2`] discards.
pub fn ifft2_complex<T: Real>(full: &[Complex<T>], h: usize, w: usize) -> Vec<Complex<T>> {
    let plan = Plan2::new(h, w);
    let scale = T::one() / T::of((h * w) as f64);
    let mut out = full.to_vec();
    for plane in out.chunks_mut(h * w) {
        plan.fft2_complex(plane, true);
        plane.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_only_dc() {
        let x = Tensor::<f64>::full(&[1, 4, 4], 2.5);
        let s = fft2(&x).unwrap();
        assert_eq!(s.coeffs_per_channel(), 4 * 3);
        assert!((s.get(0, 0, 0).re - 40.0).abs() < 1e-12);
        for k1 in 0..4 {
            for k2 in 0..3 {
                if (k1, k2) != (0, 0) {
                    assert!(s.get(0, k1, k2).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros(&[1, 8, 8]);
        x.data_mut()[0] = 1.0;
        let s = fft2(&x).unwrap();
        for c in s.coeffs() {
            assert!((c - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_spectrum_gives_zero_image() {
        let s = Spectrum::<f64>::zeros(&[2], 4, 6);
        assert!(ifft2(&s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_width_layout() {
        let x = Tensor::<f64>::from_fn(&[3, 5, 7], |i| (i as f64).cos());
        let s = fft2(&x).unwrap();
        assert_eq!(s.coeffs_per_channel(), 5 * 4);
        let back = ifft2(&s);
        assert!(back.max_abs_diff(&x) < 1e-12);
    }
}
