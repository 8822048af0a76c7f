//! One- and two-dimensional discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey pass; every
//! other length falls back to a direct O(n^2) sum against a precomputed
//! root-of-unity table. Neither direction applies a normalization factor;
//! the 2-D real inverse divides by `H * W`.

use num_complex::Complex;

use crate::tensor::Real;

#[derive(Clone, Debug)]
enum Kind<T> {
    Radix2 { twiddles: Vec<Complex<T>>, rev: Vec<usize> },
    Direct { roots: Vec<Complex<T>> },
}

#[derive(Clone, Debug)]
pub struct FftPlan<T> {
    n: usize,
    kind: Kind<T>,
}

fn root<T: Real>(k: usize, n: usize) -> Complex<T> {
    let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
    Complex::new(T::of(theta.cos()), T::of(theta.sin()))
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let kind = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            let rev = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
            Kind::Radix2 { twiddles: (0..n / 2).map(|k| root(k, n)).collect(), rev }
        } else {
            Kind::Direct { roots: (0..n).map(|k| root(k, n)).collect() }
        };
        Self { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place unnormalized transform. `inverse` flips the exponent sign.
    pub fn process(&self, buf: &mut [Complex<T>], inverse: bool, scratch: &mut Vec<Complex<T>>) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kind {
            Kind::Radix2 { twiddles, rev } => {
                for (i, &j) in rev.iter().enumerate() {
                    if i < j {
                        buf.swap(i, j);
                    }
                }
                let n = self.n;
                let mut len = 2;
                while len <= n {
                    let half = len / 2;
                    let step = n / len;
                    for start in (0..n).step_by(len) {
                        for j in 0..half {
                            let mut w = twiddles[j * step];
                            if inverse {
                                w = w.conj();
                            }
                            let u = buf[start + j];
                            let v = buf[start + j + half] * w;
                            buf[start + j] = u + v;
                            buf[start + j + half] = u - v;
                        }
                    }
                    len <<= 1;
                }
            }
            Kind::Direct { roots } => {
                let n = self.n;
                scratch.clear();
                scratch.extend_from_slice(buf);
                for (k, out) in buf.iter_mut().enumerate() {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for (j, &x) in scratch.iter().enumerate() {
                        let mut w = roots[(k * j) % n];
                        if inverse {
                            w = w.conj();
                        }
                        acc += x * w;
                    }
                    *out = acc;
                }
            }
        }
    }
}

/// Row/column plans for an `H x W` grid with Hermitian storage of `W/2 + 1` columns.
#[derive(Clone, Debug)]
pub struct Plan2<T> {
    pub h: usize,
    pub w: usize,
    rows: FftPlan<T>,
    cols: FftPlan<T>,
}

impl<T: Real> Plan2<T> {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, rows: FftPlan::new(w), cols: FftPlan::new(h) }
    }

    pub fn half_width(&self) -> usize {
        self.w / 2 + 1
    }

    /// True for the columns that are their own conjugate mirror (DC and, for even W, Nyquist).
    pub fn self_conjugate_column(&self, k2: usize) -> bool {
        k2 == 0 || (self.w.is_multiple_of(2) && k2 == self.w / 2)
    }

    /// Real `H x W` plane to its `H x (W/2+1)` half spectrum.
    pub fn rfft2(&self, x: &[T], out: &mut [Complex<T>]) {
        let (h, w, wh) = (self.h, self.w, self.half_width());
        debug_assert_eq!(x.len(), h * w);
        debug_assert_eq!(out.len(), h * wh);
        let mut scratch = Vec::new();
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for r in 0..h {
            for (c, v) in row.iter_mut().zip(&x[r * w..(r + 1) * w]) {
                *c = Complex::new(*v, T::zero());
            }
            self.rows.process(&mut row, false, &mut scratch);
            out[r * wh..(r + 1) * wh].copy_from_slice(&row[..wh]);
        }
        self.columns(out, false, &mut scratch);
    }

    /// Half spectrum back to a real plane, with the `1/(H*W)` factor.
    ///
    /// Columns 1..W/2 are mirrored by conjugation; the self-conjugate columns
    /// contribute only their Hermitian part, so any spectrum maps to a real
    /// signal.
    pub fn irfft2(&self, z: &[Complex<T>], out: &mut [T]) {
        let (h, w, wh) = (self.h, self.w, self.half_width());
        debug_assert_eq!(z.len(), h * wh);
        debug_assert_eq!(out.len(), h * w);
        let mut scratch = Vec::new();
        let mut tmp = z.to_vec();
        self.columns(&mut tmp, true, &mut scratch);
        let scale = T::one() / T::of((h * w) as f64);
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for r in 0..h {
            let half = &tmp[r * wh..(r + 1) * wh];
            row[..wh].copy_from_slice(half);
            for k in 1..=(w - 1) / 2 {
                row[w - k] = half[k].conj();
            }
            self.rows.process(&mut row, true, &mut scratch);
            for (o, c) in out[r * w..(r + 1) * w].iter_mut().zip(&row) {
                *o = c.re * scale;
            }
        }
    }

    fn columns(&self, buf: &mut [Complex<T>], inverse: bool, scratch: &mut Vec<Complex<T>>) {
        let (h, wh) = (self.h, self.half_width());
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for k2 in 0..wh {
            for r in 0..h {
                col[r] = buf[r * wh + k2];
            }
            self.cols.process(&mut col, inverse, scratch);
            for r in 0..h {
                buf[r * wh + k2] = col[r];
            }
        }
    }

    /// Full complex 2-D transform of an `H x W` complex plane (no normalization).
    pub fn fft2_complex(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let mut scratch = Vec::new();
        for r in 0..h {
            self.rows.process(&mut buf[r * w..(r + 1) * w], inverse, &mut scratch);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            self.cols.process(&mut col, inverse, &mut scratch);
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex<f64>], inverse: bool) -> Vec<Complex<f64>> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let t = sign * 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                        v * Complex::new(t.cos(), t.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn one_dimensional_matches_naive_for_all_small_lengths() {
        for n in 1..=20 {
            let x: Vec<Complex<f64>> =
                (0..n).map(|i| Complex::new((i as f64 * 1.3).sin(), (i as f64 * 0.4).cos())).collect();
            let plan = FftPlan::new(n);
            for inverse in [false, true] {
                let mut buf = x.clone();
                plan.process(&mut buf, inverse, &mut Vec::new());
                let want = naive(&x, inverse);
                for (a, b) in buf.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-10, "n={n}");
                }
            }
        }
    }
}
