//! Kinetic simulator for the two Vlasov-Poisson systems with massless
//! electrons (variable and fixed total charge) on a truncated whole-space
//! domain: split-field electrostatics, particle transport, conservation
//! diagnostics, and Wasserstein-2 stability verification.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`, via
//! [`Real`]); the CLI, file formats, and the acceptance battery use the
//! concrete aliases below.

pub mod battery;
pub mod config;
pub mod diagnostics;
pub mod electrostatics;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod io;
pub mod kinetics;
pub mod poisson;
pub mod runner;
pub mod scalar;
pub mod stability;

pub use electrostatics::{ChargeMode, PotentialSplit, SolverSettings};
pub use error::{Error, Result};
pub use kinetics::{InitialDataSpec, ParticleEnsemble, SpatialProfile, VelocityProfile};
pub use scalar::Real;

/// Default scalar type used by the CLI and the acceptance battery.
pub type Scalar = f64;

pub type Grid = grid::GridSpec<Scalar>;
pub type Field = field::ScalarField<Scalar>;
pub type VField = field::VectorField<Scalar>;
