//! Differentiable numerics: tensors, a reverse-mode tape, MLPs, Adam,
//! finite-difference gradient checking and bit-exact checkpoints.
//!
//! Everything is 64-bit floating point, single-threaded and deterministic:
//! the same seeds and inputs reproduce the same bits.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use mlp::{Mlp, OutputActivation};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{sigmoid_f64, softplus_f64, Tape, V};
pub use tensor::Tensor;
