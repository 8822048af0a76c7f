//! Differentiable operations, implemented as methods on [`Var`](crate::autodiff::Var).

mod activation;
mod conv;
mod elementwise;
mod resample;
mod shape;

pub use activation::{gelu_scalar, normal_cdf};
pub use conv::conv_output_size;
pub use resample::ResampleMode;
