//! Core toolkit for the model-assisted adversarial game: a small autodiff
//! engine, the four networks, the parametric image simulators, and the
//! two-stage training procedure that ties them together.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod graph;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod simulators;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
