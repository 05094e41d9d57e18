//! Scalar abstractions shared by the geometry and tiling code.
//!
//! Box arithmetic only needs a field with an ordering, so it is written against
//! [`Scalar`] and works for `f32`, `f64` and exact rationals alike. Operations
//! that round or take square roots additionally require [`FloatScalar`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, NumCast};

/// Ordered field element usable as a box coordinate.
pub trait Scalar: Num + PartialOrd + Copy + Debug {
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl<T: Num + PartialOrd + Copy + Debug> Scalar for T {}

/// Floating point scalar: `f32` or `f64`.
pub trait FloatScalar: Scalar + Float + FromPrimitive + NumCast {
    fn of_u32(v: u32) -> Self {
        <Self as NumCast>::from(v).expect("u32 is representable in every float type")
    }
}

impl FloatScalar for f32 {}
impl FloatScalar for f64 {}
