//! Scalar abstraction: the numeric element type of every tensor.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type for tensors, losses and gradients.
///
/// `f32` is the training precision; `f64` is used by the independent
/// oracles and finite-difference gradient checks so that discretization
/// noise stays far below the verification tolerances.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + LinalgScalar + ScalarOperand + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (always succeeds for finite inputs).
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to scalar")
    }
    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize converts to scalar")
    }
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
