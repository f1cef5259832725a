//! Generic scalar abstraction for the numerical kernels.
//!
//! Everything in this crate is written against [`Real`], which is satisfied by
//! `f32` and `f64`. The concrete aliases used by the CLI and the acceptance
//! battery live at the crate root (`Scalar = f64`).

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};
use rustfft::FftNum;

/// Floating point scalar usable by every kernel in the crate: grid fields,
/// transforms, particle pushes and transport solvers.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssignOps
    + FftNum
    + Sum<Self>
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and frozen constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }

    /// Lossy conversion to `f64`, for serialization and reporting.
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable as scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}
