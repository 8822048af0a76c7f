use rand::Rng;

use super::conv::{SpectralModes, SpectralWeights};
use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::{Conv2d, Ctx};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Real;

/// `gelu(W v + b + K(v))` where `K` is the spectral convolution and `W` a 1x1 conv.
pub fn fno_layer<'t, T: Real>(
    v: Var<'t, T>,
    re: Var<'t, T>,
    im: Var<'t, T>,
    modes: SpectralModes,
    pointwise: Var<'t, T>,
    bias: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let local = v.conv2d(pointwise, Some(bias), 1, 0)?;
    let global = v.spectral_conv(re, im, modes)?;
    Ok(local.add(global)?.gelu())
}

#[derive(Clone, Debug)]
pub struct FnoLayer {
    pub re: ParamId,
    pub im: ParamId,
    pub modes: SpectralModes,
    pub pointwise: Conv2d,
}

impl FnoLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        modes: SpectralModes,
    ) -> Self {
        let w = SpectralWeights::<T>::random(modes, c_in, c_out, rng);
        let re = store.add(format!("{name}.spectral.re"), w.re);
        let im = store.add(format!("{name}.spectral.im"), w.im);
        let pointwise = Conv2d::new(store, rng, &format!("{name}.pointwise"), c_in, c_out, 1, 1, true);
        Self { re, im, modes, pointwise }
    }

    pub fn count(c_in: usize, c_out: usize, modes: SpectralModes) -> usize {
        let spectral = 2 * (2 * modes.modes1) * (modes.modes2 + 1) * c_in * c_out;
        spectral + Conv2d::count(c_in, c_out, 1, true)
    }

    pub fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, v: Var<'a, T>) -> Result<Var<'a, T>> {
        fno_layer(
            v,
            ctx.p(self.re),
            ctx.p(self.im),
            self.modes,
            ctx.p(self.pointwise.weight),
            ctx.p(self.pointwise.bias.expect("pointwise bias")),
        )
    }
}
