//! Recovery of 3D body pose and absolute position for every person in a
//! crowded scene, built around group-level relational reasoning.
//!
//! Persons are grouped by feature affinity into multiscale hyperedges;
//! message passing over those hyperedges refines per-person features, and a
//! box-conditioned head regresses pose, shape and camera parameters from
//! which absolute translation is decoded. A seeded synthetic scene generator
//! supplies training data, and the trainer, metrics and CLI close the loop.
//!
//! All numerics are f64 on a hand-rolled reverse-mode tape; every random
//! stream is seeded, so runs reproduce bit for bit.

pub mod body_model;
pub mod config;
pub mod error;
pub mod grouping;
pub mod losses;
pub mod metrics;
pub mod numerics;
pub mod reasoning;
pub mod synth;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
