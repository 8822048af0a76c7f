use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    NearestUp,
    AvgDown,
}

fn nearest_up<T: Real>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (ho, wo) = (h * f, w * f);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            let row = &src[(oy / f) * w..][..w];
            for ox in 0..wo {
                dst[oy * wo + ox] = row[ox / f];
            }
        }
    }
    out
}

/// Sums each `f x f` block. Scaled by the caller for averaging.
fn block_sum<T: Real>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (ho, wo) = (h / f, w / f);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for iy in 0..h {
            for ix in 0..w {
                dst[(iy / f) * wo + ix / f] += src[iy * w + ix];
            }
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// Spatial resampling of a `[B, C, H, W]` tensor by an integer factor.
    pub fn resample(self, factor: usize, mode: ResampleMode) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if factor == 0 {
            return Err(Error::invalid("resample", "factor must be >= 1"));
        }
        if factor == 1 {
            return Ok(self.tape().record((*x).clone(), &[self], |g| vec![Some(g.clone())]));
        }
        let planes = b * c;
        match mode {
            ResampleMode::NearestUp => {
                let out = Tensor::new(&[b, c, h * factor, w * factor], nearest_up(x.data(), planes, h, w, factor))?;
                Ok(self.tape().record(out, &[self], move |g| {
                    let gx = block_sum(g.data(), planes, h * factor, w * factor, factor);
                    vec![Some(Tensor::new(&[b, c, h, w], gx).expect("resample grad"))]
                }))
            }
            ResampleMode::AvgDown => {
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::invalid(
                        "resample",
                        format!("{h}x{w} is not divisible by downsampling factor {factor}"),
                    ));
                }
                let inv = T::one() / T::of((factor * factor) as f64);
                let mut sums = block_sum(x.data(), planes, h, w, factor);
                sums.iter_mut().for_each(|v| *v *= inv);
                let out = Tensor::new(&[b, c, h / factor, w / factor], sums)?;
                Ok(self.tape().record(out, &[self], move |g| {
                    let mut gx = nearest_up(g.data(), planes, h / factor, w / factor, factor);
                    gx.iter_mut().for_each(|v| *v *= inv);
                    vec![Some(Tensor::new(&[b, c, h, w], gx).expect("resample grad"))]
                }))
            }
        }
    }
}
