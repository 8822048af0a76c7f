//! Video frame interpolation with a Fourier neural interpolation operator
//! blended with an adaptive-collaboration-of-flows warp.
//!
//! The crate is self-contained: a reverse-mode autodiff engine ([`autodiff`],
//! [`ops`]), real 2-D FFTs and spectral convolution ([`spectral`]), the two
//! interpolation pathways ([`nio`], [`adacof`]) and their blend ([`model`]),
//! training with Adam and binary checkpoints ([`train`], [`checkpoint`]), and triplet data,
//! synthetic generation and PSNR/SSIM ([`data`], [`metrics`], [`eval`]).

pub mod adacof;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nio;
pub mod nn;
pub mod ops;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{DType, Real, Tensor};
