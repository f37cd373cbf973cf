//! Dense tensor math, reverse-mode differentiation for the fixed
//! computation patterns used by the pipeline, and the Adam optimizer.
//! 64-bit floats everywhere.

pub mod check;
pub mod model;
pub mod params;
pub mod prop;
pub mod tape;
pub mod tensor;

pub use params::{Checkpoint, GradMap, ParamSet};
pub use tensor::Tensor2;

/// Adam defaults used across the pipeline.
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
