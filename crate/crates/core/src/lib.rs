//! Memory-augmented sequence models with reverse-mode automatic
//! differentiation.
//!
//! Everything is computed in `f64` so that analytic gradients can be checked
//! against central finite differences at tight tolerances, and all sources of
//! randomness go through [`SeedRng`] so runs are bit-reproducible.

pub mod checkpoint;
pub mod controller;
pub mod error;
pub mod gradcheck;
pub mod introspect;
pub mod memory;
pub mod model;
pub mod params;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use error::CoreError;
pub use model::{Architecture, Model, ModelConfig, RunMode};
pub use params::{ParamId, ParamSet};
pub use rng::SeedRng;
pub use tensor::{Tape, TensorId};
