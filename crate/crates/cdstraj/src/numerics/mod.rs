//! Scalar-generic numerics: tensors, reverse-mode autodiff, RNG, optimizer.
//!
//! Everything here is generic over [`Real`] (implemented for `f32` and `f64`)
//! so the same kernels serve both precisions; the pipeline instantiates `f64`.

mod adam;
mod finitediff;
mod params;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use adam::Adam;
pub use finitediff::{finite_diff_grad, grad_check};
pub use params::{Gradients, InitSpec, ParamSet};
pub use rng::SplitRng;
pub use scalar::Real;
pub use tape::{BoundParams, Tape};
pub use tensor::Tensor;
