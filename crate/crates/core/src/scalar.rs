//! Scalar abstraction so the numeric kernels work at either precision.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for matrices and the tape. Implemented for
/// `f32` and `f64`; model code picks one through the crate-root aliases.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type. Panics only if the
    /// value is not representable, which never happens for the constants
    /// used in this crate.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal representable in scalar type")
    }

    /// Lossy widening to `f64`, for reporting and serialization.
    fn to_real(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip_at_both_precisions() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(0.25f64.to_real(), 0.25);
        assert_eq!(0.25f32.to_real(), 0.25);
    }
}
