//! Infrared/visible image fusion with interactive and compensatory attention,
//! trained adversarially against two Wasserstein critics.
//!
//! The crate carries its own small tensor/autograd stack ([`tape`]) so that
//! every network can be evaluated in `f32` for training and in `f64` for
//! oracle and gradient checks.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod params;
pub mod real;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{FusionError, Result};
pub use real::Real;
pub use tensor::{FeatureMap, Tensor};
