//! 2-D cross-correlation (no kernel flip) with zero padding.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Output positions `o` in `[lo, hi)` whose input index `o*stride + k - pad`
/// lies inside `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { (len + pad - k).div_ceil(stride).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

pub fn conv_output_size(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

fn forward<T: Real>(x: &[T], wt: &[T], g: Geometry) -> Vec<T> {
    let Geometry { batch, c_in, h, w, c_out, kh, kw, stride, pad, ho, wo } = g;
    let mut out = vec![T::zero(); batch * c_out * ho * wo];
    for b in 0..batch {
        for co in 0..c_out {
            let o_plane = &mut out[(b * c_out + co) * ho * wo..][..ho * wo];
            for ci in 0..c_in {
                let i_plane = &x[(b * c_in + ci) * h * w..][..h * w];
                let k = &wt[(co * c_in + ci) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..kw {
                        let wv = k[ky * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(kx, pad, stride, w, wo);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let o_row = &mut o_plane[oy * wo..(oy + 1) * wo];
                            let i_row = &i_plane[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let n = ox1 - ox0;
                                for (o, &i) in o_row[ox0..ox1].iter_mut().zip(&i_row[ix0..ix0 + n]) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    o_row[ox] += wv * i_row[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn backward_input<T: Real>(gout: &[T], wt: &[T], g: Geometry) -> Vec<T> {
    let Geometry { batch, c_in, h, w, c_out, kh, kw, stride, pad, ho, wo } = g;
    let mut gx = vec![T::zero(); batch * c_in * h * w];
    for b in 0..batch {
        for co in 0..c_out {
            let g_plane = &gout[(b * c_out + co) * ho * wo..][..ho * wo];
            for ci in 0..c_in {
                let x_plane = &mut gx[(b * c_in + ci) * h * w..][..h * w];
                let k = &wt[(co * c_in + ci) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..kw {
                        let wv = k[ky * kw + kx];
                        let (ox0, ox1) = valid_range(kx, pad, stride, w, wo);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                            let x_row = &mut x_plane[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let n = ox1 - ox0;
                                for (xv, &gv) in x_row[ix0..ix0 + n].iter_mut().zip(&g_row[ox0..ox1]) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    x_row[ox * stride + kx - pad] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn backward_kernel<T: Real>(gout: &[T], x: &[T], g: Geometry) -> Vec<T> {
    let Geometry { batch, c_in, h, w, c_out, kh, kw, stride, pad, ho, wo } = g;
    let mut gw = vec![T::zero(); c_out * c_in * kh * kw];
    for b in 0..batch {
        for co in 0..c_out {
            let g_plane = &gout[(b * c_out + co) * ho * wo..][..ho * wo];
            for ci in 0..c_in {
                let x_plane = &x[(b * c_in + ci) * h * w..][..h * w];
                let k = &mut gw[(co * c_in + ci) * kh * kw..][..kh * kw];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(ky, pad, stride, h, ho);
                    for kx in 0..kw {
                        let (ox0, ox1) = valid_range(kx, pad, stride, w, wo);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let g_row = &g_plane[oy * wo..(oy + 1) * wo];
                            let x_row = &x_plane[iy * w..(iy + 1) * w];
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let n = ox1 - ox0;
                                acc +=
                                    g_row[ox0..ox1].iter().zip(&x_row[ix0..ix0 + n]).map(|(&a, &b)| a * b).sum::<T>();
                            } else {
                                for ox in ox0..ox1 {
                                    acc += g_row[ox] * x_row[ox * stride + kx - pad];
                                }
                            }
                        }
                        k[ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

impl<'t, T: Real> Var<'t, T> {
    /// Cross-correlates `[B, C_in, H, W]` with `[C_out, C_in, kH, kW]`.
    pub fn conv2d(
        self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        let (x, k) = (self.value(), kernel.value());
        let (batch, c_in, h, w) = x.dims4()?;
        let (c_out, kc_in, kh, kw) = k.dims4()?;
        if kc_in != c_in {
            return Err(Error::invalid("conv2d", format!("kernel expects {kc_in} input channels, input has {c_in}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let (ho, wo) = match (conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::invalid(
                    "conv2d",
                    format!("{kh}x{kw} kernel exceeds padded {h}x{w} input (padding {padding})"),
                ))
            }
        };
        let geo = Geometry { batch, c_in, h, w, c_out, kh, kw, stride, pad: padding, ho, wo };
        let out = Tensor::new(&[batch, c_out, ho, wo], forward(x.data(), k.data(), geo))?;
        let y = self.tape().record(out, &[self, kernel], move |g| {
            let gx = Tensor::new(x.shape(), backward_input(g.data(), k.data(), geo)).expect("conv input grad shape");
            let gk = Tensor::new(k.shape(), backward_kernel(g.data(), x.data(), geo)).expect("conv kernel grad shape");
            vec![Some(gx), Some(gk)]
        });
        match bias {
            Some(b) => y.bias_add(b),
            None => Ok(y),
        }
    }
}
