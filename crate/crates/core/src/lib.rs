//! Rayleigh-Bénard convection simulation, convective-flux datasets and
//! kernel dynamic mode decomposition.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file name the `f64` instantiations used by the
//! experiment harness.

pub mod dataset;
pub mod dns;
pub mod field;
pub mod kdmd;
pub mod linalg;
pub mod scalar;
pub mod spectral;

pub use field::{FieldError, Grid, ScalarField};
pub use scalar::Real;

pub type Field = ScalarField<f64>;
pub type Field32 = ScalarField<f32>;
pub type Episode = dataset::Episode<f64>;
pub type FlowState = dns::FlowState<f64>;
pub type RbcSolver = dns::RbcSolver<f64>;
pub type KdmdModel = kdmd::KdmdModel<f64>;
