//! Shared layer plumbing: the forward context and a parameterized conv layer.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Borrowed pair of tape and parameters threaded through every forward pass.
#[derive(Clone, Copy)]
pub struct Ctx<'a, T> {
    pub tape: &'a Tape<T>,
    pub params: &'a ParamStore<T>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(tape: &'a Tape<T>, params: &'a ParamStore<T>) -> Self {
        Self { tape, params }
    }

    pub fn p(&self, id: ParamId) -> Var<'a, T> {
        self.tape.param(self.params, id)
    }
}

pub fn uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Square kernel, "same" padding, uniform init in `+-1/sqrt(fan_in)`.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel).max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[c_out, c_in, kernel, kernel], bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, &[c_out], bound)));
        Self { weight, bias, c_in, c_out, kernel, stride, padding: kernel / 2 }
    }

    /// Closed-form scalar count.
    pub fn count(c_in: usize, c_out: usize, kernel: usize, bias: bool) -> usize {
        c_out * c_in * kernel * kernel + if bias { c_out } else { 0 }
    }

    pub fn forward<'a, T: Real>(&self, ctx: Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.conv2d(ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), self.stride, self.padding)
    }
}
