//! Central finite-difference gradient checks in 64-bit.
//!
//! Derivatives use the fourth-order central stencil
//! `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, whose truncation error
//! is `O(h^4)`, so a `1e-5` tolerance at `h = 1e-3` measures the adjoint
//! rather than the stencil. The checked function's output is projected onto a fixed pseudo-random
//! vector to get a scalar, so every output element contributes. Errors are
//! relative to `max(|analytic|, |numeric|)`, floored at `1e-3` of the largest
//! numeric gradient of the same input so that near-zero entries are judged
//! against the gradient's scale rather than their own.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::Ctx;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    /// `(analytic, numeric)` at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn projection(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| {
        let t = (i as f64 + 1.0) * 0.618_033_988_75;
        0.5 + (t - t.floor())
    })
}

fn project<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = y.tape().constant(projection(&y.shape()));
    Ok(y.mul(w)?.sum())
}

/// `f(x)` is evaluated at offsets `x` from the unperturbed point.
fn stencil(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (p2, p1, m1, m2) = (f(2.0 * h)?, f(h)?, f(-h)?, f(-2.0 * h)?);
    Ok((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

struct Tracker {
    max_rel_err: f64,
    worst: (usize, usize),
    worst_values: (f64, f64),
    checked: usize,
}

impl Tracker {
    fn new() -> Self {
        Self { max_rel_err: 0.0, worst: (0, 0), worst_values: (0.0, 0.0), checked: 0 }
    }

    fn group(&mut self, input: usize, pairs: &[(usize, f64, f64)]) {
        let scale = pairs.iter().map(|p| p.2.abs()).fold(0.0, f64::max);
        let floor = (1e-3 * scale).max(1e-12);
        for &(idx, a, n) in pairs {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            self.checked += 1;
            if rel > self.max_rel_err {
                self.max_rel_err = rel;
                self.worst = (input, idx);
                self.worst_values = (a, n);
            }
        }
    }

    fn finish(self) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err,
            worst: self.worst,
            worst_values: self.worst_values,
            checked: self.checked,
        }
    }
}

/// Checks every element of every input of `f`.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = project(f(&leaves)?)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(project(f(&vars)?)?.value().item())
    };

    let mut tracker = Tracker::new();
    let mut work = inputs.to_vec();
    for (j, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).expect("leaf gradient").clone();
        let mut pairs = Vec::with_capacity(analytic.len());
        for idx in 0..analytic.len() {
            let orig = work[j].data()[idx];
            let numeric = stencil(step, |x| {
                work[j].data_mut()[idx] = orig + x;
                eval(&work)
            })?;
            work[j].data_mut()[idx] = orig;
            pairs.push((idx, analytic.data()[idx], numeric));
        }
        tracker.group(j, &pairs);
    }
    Ok(tracker.finish())
}

/// Checks selected `(parameter, element)` coordinates of a model forward.
/// Coordinates are grouped per parameter, and `worst.0` is a parameter index.
pub fn check_params<F>(store: &ParamStore<f64>, coords: &[(ParamId, usize)], step: f64, f: F) -> Result<GradCheck>
where
    F: for<'a> Fn(Ctx<'a, f64>) -> Result<Var<'a, f64>>,
{
    let tape = Tape::new();
    let loss = project(f(Ctx::new(&tape, store))?)?;
    let grads = tape.backward(loss)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        Ok(project(f(Ctx::new(&tape, s))?)?.value().item())
    };

    let mut tracker = Tracker::new();
    let mut work = store.clone();
    let mut groups: Vec<(ParamId, Vec<(usize, f64, f64)>)> = Vec::new();
    for &(id, idx) in coords {
        let analytic = grads.param(id).map(|g| g.data()[idx]).unwrap_or(0.0);
        let orig = work.value(id).data()[idx];
        let numeric = stencil(step, |x| {
            work.value_mut(id).data_mut()[idx] = orig + x;
            eval(&work)
        })?;
        work.value_mut(id).data_mut()[idx] = orig;
        match groups.iter_mut().find(|g| g.0 == id) {
            Some(g) => g.1.push((idx, analytic, numeric)),
            None => groups.push((id, vec![(idx, analytic, numeric)])),
        }
    }
    for (id, pairs) in groups {
        tracker.group(id.index(), &pairs);
    }
    Ok(tracker.finish())
}
