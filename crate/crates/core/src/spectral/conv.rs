//! Spectral convolution: multiply retained low-frequency modes by a learned
//! complex tensor `R[k1, k2, c_in, c_out]` and discard the rest.
//!
//! Retained modes are `k1 in [0, m1) U [H - m1, H)` on the full axis and
//! `k2 in [0, m2]` on the Hermitian axis. `R` therefore has shape
//! `[2*m1, m2 + 1, c_in, c_out]`, stored as separate real and imaginary
//! tensors so both take part in gradient tracking.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fft::Plan2;
use super::Spectrum;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::uniform;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralModes {
    pub modes1: usize,
    pub modes2: usize,
}

impl SpectralModes {
    pub fn new(modes1: usize, modes2: usize) -> Self {
        Self { modes1, modes2 }
    }

    /// Shape of one real component of `R`.
    pub fn weight_shape(&self, c_in: usize, c_out: usize) -> [usize; 4] {
        [2 * self.modes1, self.modes2 + 1, c_in, c_out]
    }
}

/// Modes may not exceed `(H/2, W/2)`.
pub fn check_mode_cap(modes: SpectralModes, height: usize, width: usize) -> Result<()> {
    let (cap1, cap2) = (height / 2, width / 2);
    if modes.modes1 == 0 || modes.modes2 == 0 || modes.modes1 > cap1 || modes.modes2 > cap2 {
        return Err(Error::ModeCap { modes1: modes.modes1, modes2: modes.modes2, cap1, cap2, height, width });
    }
    Ok(())
}

/// Frequency index on the full axis addressed by row `r` of `R`.
#[inline]
pub fn retained_row_to_k1(r: usize, modes1: usize, height: usize) -> usize {
    if r < modes1 {
        r
    } else {
        height - 2 * modes1 + r
    }
}

struct Layout {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    modes: SpectralModes,
}

impl Layout {
    fn wh(&self) -> usize {
        self.w / 2 + 1
    }

    /// Visits every retained `(row of R, k1, k2)`.
    fn for_each_mode(&self, mut f: impl FnMut(usize, usize, usize)) {
        for r in 0..2 * self.modes.modes1 {
            let k1 = retained_row_to_k1(r, self.modes.modes1, self.h);
            for k2 in 0..=self.modes.modes2 {
                f(r, k1, k2);
            }
        }
    }

    fn r_index(&self, r: usize, k2: usize, i: usize, o: usize) -> usize {
        ((r * (self.modes.modes2 + 1) + k2) * self.c_in + i) * self.c_out + o
    }
}

fn rfft_planes<T: Real>(plan: &Plan2<T>, x: &[T], planes: usize) -> Vec<Complex<T>> {
    let (h, w, wh) = (plan.h, plan.w, plan.half_width());
    let mut out = vec![Complex::new(T::zero(), T::zero()); planes * h * wh];
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(h * wh)) {
        plan.rfft2(src, dst);
    }
    out
}

fn irfft_planes<T: Real>(plan: &Plan2<T>, z: &[Complex<T>], planes: usize) -> Vec<T> {
    let (h, w, wh) = (plan.h, plan.w, plan.half_width());
    let mut out = vec![T::zero(); planes * h * w];
    for (src, dst) in z.chunks(h * wh).zip(out.chunks_mut(h * w)) {
        plan.irfft2(src, dst);
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// Global convolution of `[B, C_in, H, W]` through the retained modes,
    /// giving `[B, C_out, H, W]`.
    pub fn spectral_conv(self, re: Var<'t, T>, im: Var<'t, T>, modes: SpectralModes) -> Result<Var<'t, T>> {
        let (x, rre, rim) = (self.value(), re.value(), im.value());
        let (batch, c_in, h, w) = x.dims4()?;
        check_mode_cap(modes, h, w)?;
        let rs = rre.shape();
        if rs.len() != 4 || rs[0] != 2 * modes.modes1 || rs[1] != modes.modes2 + 1 || rs[2] != c_in {
            return Err(Error::shape("spectral_conv", &modes.weight_shape(c_in, rs.get(3).copied().unwrap_or(0)), rs));
        }
        if rim.shape() != rs {
            return Err(Error::shape("spectral_conv", rs, rim.shape()));
        }
        let c_out = rs[3];
        let lay = Layout { c_in, c_out, h, w, modes };
        let plan = Plan2::<T>::new(h, w);
        let wh = lay.wh();
        let plane = h * wh;

        let xs = rfft_planes(&plan, x.data(), batch * c_in);
        let mut ys = vec![Complex::new(T::zero(), T::zero()); batch * c_out * plane];
        lay.for_each_mode(|r, k1, k2| {
            let k = k1 * wh + k2;
            for b in 0..batch {
                for i in 0..c_in {
                    let xv = xs[(b * c_in + i) * plane + k];
                    for o in 0..c_out {
                        let ri = lay.r_index(r, k2, i, o);
                        let rv = Complex::new(rre.data()[ri], rim.data()[ri]);
                        ys[(b * c_out + o) * plane + k] += rv * xv;
                    }
                }
            }
        });
        let out = Tensor::new(&[batch, c_out, h, w], irfft_planes(&plan, &ys, batch * c_out))?;

        Ok(self.tape().record(out, &[self, re, im], move |g| {
            let hw = T::of((h * w) as f64);
            let gs = rfft_planes(&plan, g.data(), batch * c_out);
            let mut g_re = vec![T::zero(); rre.len()];
            let mut g_im = vec![T::zero(); rre.len()];
            let mut gx_spec = vec![Complex::new(T::zero(), T::zero()); batch * c_in * plane];
            lay.for_each_mode(|r, k1, k2| {
                let k = k1 * wh + k2;
                // d(real output)/d(half-spectrum coefficient): interior columns
                // appear twice through the conjugate mirror.
                let (factor, back) =
                    if plan.self_conjugate_column(k2) { (T::one(), T::one()) } else { (T::of(2.0), T::of(0.5)) };
                for b in 0..batch {
                    for o in 0..c_out {
                        let gz = gs[(b * c_out + o) * plane + k] * (factor / hw);
                        for i in 0..c_in {
                            let ri = lay.r_index(r, k2, i, o);
                            let xv = xs[(b * c_in + i) * plane + k];
                            let gr = gz * xv.conj();
                            g_re[ri] += gr.re;
                            g_im[ri] += gr.im;
                            let rv = Complex::new(rre.data()[ri], rim.data()[ri]);
                            gx_spec[(b * c_in + i) * plane + k] += gz * rv.conj() * back;
                        }
                    }
                }
            });
            let mut gx = irfft_planes(&plan, &gx_spec, batch * c_in);
            gx.iter_mut().for_each(|v| *v *= hw);
            vec![
                Some(Tensor::new(&[batch, c_in, h, w], gx).expect("spectral grad x")),
                Some(Tensor::new(rre.shape(), g_re).expect("spectral grad re")),
                Some(Tensor::new(rre.shape(), g_im).expect("spectral grad im")),
            ]
        }))
    }
}

/// A standalone spectral weight tensor `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights<T> {
    pub modes: SpectralModes,
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> SpectralWeights<T> {
    pub fn new(modes: SpectralModes, re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        let s = re.shape();
        if s.len() != 4 || s[0] != 2 * modes.modes1 || s[1] != modes.modes2 + 1 || im.shape() != s {
            return Err(Error::shape(
                "spectral_weights",
                &modes.weight_shape(s.get(2).copied().unwrap_or(0), s.get(3).copied().unwrap_or(0)),
                s,
            ));
        }
        Ok(Self { modes, re, im })
    }

    /// Real and imaginary parts i.i.d. uniform in `(-s, s)`, `s = 1/(c_in*c_out)`.
    pub fn random<R: Rng>(modes: SpectralModes, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let shape = modes.weight_shape(c_in, c_out);
        let s = 1.0 / (c_in * c_out) as f64;
        let re = uniform(rng, &shape, s);
        let im = uniform(rng, &shape, s);
        Self { modes, re, im }
    }

    /// Every entry equal to `value` (imaginary part zero).
    pub fn constant(modes: SpectralModes, c_in: usize, c_out: usize, value: T) -> Self {
        let shape = modes.weight_shape(c_in, c_out);
        Self { modes, re: Tensor::full(&shape, value), im: Tensor::zeros(&shape) }
    }

    pub fn c_in(&self) -> usize {
        self.re.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.re.shape()[3]
    }

    /// Rejects grids whose `(H/2, W/2)` cap is below the weights' modes.
    pub fn admits(&self, height: usize, width: usize) -> Result<()> {
        check_mode_cap(self.modes, height, width)
    }

    /// Applies the weights to `[C_in, H, W]` or `[B, C_in, H, W]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batched = x.rank() == 4;
        let x4 = if batched { x.clone() } else { x.unsqueeze0() };
        let tape = Tape::new();
        let v = tape.constant(x4);
        let y = v.spectral_conv(tape.constant(self.re.clone()), tape.constant(self.im.clone()), self.modes)?;
        let out = (*y.value()).clone();
        Ok(if batched { out } else { out.select0(0) })
    }

    /// Pointwise product over the retained modes of a `[.., C_in]` spectrum;
    /// every other mode of the result is zero.
    pub fn multiply_spectrum(&self, x: &Spectrum<T>) -> Result<Spectrum<T>> {
        let (h, w) = x.source_shape();
        self.admits(h, w)?;
        let (c_in, c_out) = (self.c_in(), self.c_out());
        if !x.channels().is_multiple_of(c_in) {
            return Err(Error::invalid(
                "multiply_spectrum",
                format!("{} channels is not a multiple of C_in = {c_in}", x.channels()),
            ));
        }
        let batch = x.channels() / c_in;
        let lay = Layout { c_in, c_out, h, w, modes: self.modes };
        let mut out = Spectrum::zeros(&[batch, c_out], h, w);
        lay.for_each_mode(|r, k1, k2| {
            for b in 0..batch {
                for o in 0..c_out {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for i in 0..c_in {
                        let ri = lay.r_index(r, k2, i, o);
                        acc += Complex::new(self.re.data()[ri], self.im.data()[ri]) * x.get(b * c_in + i, k1, k2);
                    }
                    out.set(b * c_out + o, k1, k2, acc);
                }
            }
        });
        Ok(out)
    }

    /// The same weights on a grid of any admissible size. Resolution transfer
    /// is exactly [`apply`](Self::apply) once the mode cap is satisfied.
    pub fn apply_at_resolution(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() < 2 {
            return Err(Error::invalid("apply_at_resolution", "input must be at least 2-D"));
        }
        self.admits(s[s.len() - 2], s[s.len() - 1])?;
        self.apply(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_is_half_the_grid() {
        assert!(check_mode_cap(SpectralModes::new(4, 4), 8, 8).is_ok());
        assert!(matches!(check_mode_cap(SpectralModes::new(5, 5), 8, 8), Err(Error::ModeCap { cap1: 4, cap2: 4, .. })));
        assert!(check_mode_cap(SpectralModes::new(10, 10), 64, 64).is_ok());
        assert!(check_mode_cap(SpectralModes::new(40, 40), 64, 64).is_err());
    }

    #[test]
    fn retained_rows_cover_both_corners() {
        let rows: Vec<_> = (0..6).map(|r| retained_row_to_k1(r, 3, 16)).collect();
        assert_eq!(rows, vec![0, 1, 2, 13, 14, 15]);
        let full: Vec<_> = (0..8).map(|r| retained_row_to_k1(r, 4, 8)).collect();
        assert_eq!(full, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn identity_and_zero_multipliers() {
        let modes = SpectralModes::new(4, 4);
        let x = Tensor::<f32>::from_fn(&[1, 8, 8], |i| ((i * 37 % 11) as f32) / 11.0);
        let id = SpectralWeights::constant(modes, 1, 1, 1.0f32);
        let y = id.apply(&x).unwrap();
        assert!(y.max_abs_diff(&x) <= 1e-6);
        let zero = SpectralWeights::constant(modes, 1, 1, 0.0f32);
        assert!(zero.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inadmissible_resolution_rejected() {
        let w = SpectralWeights::<f64>::constant(SpectralModes::new(5, 5), 1, 1, 1.0);
        assert!(w.apply_at_resolution(&Tensor::zeros(&[1, 8, 8])).is_err());
        assert!(w.apply_at_resolution(&Tensor::zeros(&[1, 10, 10])).is_ok());
    }
}
