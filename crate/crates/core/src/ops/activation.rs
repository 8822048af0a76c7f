use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    T::of(xf * normal_cdf(xf))
}

fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let xf = x.as_f64();
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * xf * xf).exp();
    T::of(normal_cdf(xf) + xf * pdf)
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn gelu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(gelu_scalar);
        self.tape().record(out, &[self], move |g| vec![Some(g.zip_map(&x, |g, x| g * gelu_grad_scalar(x)))])
    }

    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v.max(T::zero()));
        self.tape()
            .record(out, &[self], move |g| vec![Some(g.zip_map(&x, |g, x| if x > T::zero() { g } else { T::zero() }))])
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let y = self.value().map(sigmoid_scalar);
        let saved = y.clone();
        self.tape().record(y, &[self], move |g| vec![Some(g.zip_map(&saved, |g, y| g * y * (T::one() - y)))])
    }

    /// Softmax over axis 1 of a `[B, K, H, W]` tensor.
    pub fn softmax_channels(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, k, h, w) = x
            .dims4()
            .map_err(|_| Error::invalid("softmax_channels", format!("expected rank 4, got {:?}", x.shape())))?;
        let hw = h * w;
        let mut y = Tensor::zeros(x.shape());
        {
            let (xs, ys) = (x.data(), y.data_mut());
            for bi in 0..b {
                let base = bi * k * hw;
                for p in 0..hw {
                    let mut m = T::neg_infinity();
                    for c in 0..k {
                        m = m.max(xs[base + c * hw + p]);
                    }
                    let mut s = T::zero();
                    for c in 0..k {
                        let e = (xs[base + c * hw + p] - m).exp();
                        ys[base + c * hw + p] = e;
                        s += e;
                    }
                    for c in 0..k {
                        ys[base + c * hw + p] /= s;
                    }
                }
            }
        }
        let saved = y.clone();
        Ok(self.tape().record(y, &[self], move |g| {
            let mut gx = Tensor::zeros(saved.shape());
            let (ys, gs, gxs) = (saved.data(), g.data(), gx.data_mut());
            for bi in 0..b {
                let base = bi * k * hw;
                for p in 0..hw {
                    let dot: T = (0..k).map(|c| gs[base + c * hw + p] * ys[base + c * hw + p]).sum();
                    for c in 0..k {
                        let i = base + c * hw + p;
                        gxs[i] = ys[i] * (gs[i] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}
