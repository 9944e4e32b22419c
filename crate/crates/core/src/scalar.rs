//! Scalar abstraction for the closed-form layer.
//!
//! All analytic quantities (clock values, inversions, quadratures,
//! eigensolves, assignment costs) are generic over [`Real`]; the
//! Monte-Carlo layer is fixed to `f64` because accumulation is done in
//! double precision regardless of the scalar the caller works in.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar usable by the closed-form operations.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for pulling an `f64` constant into the working scalar type.
#[inline]
pub(crate) fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant representable in scalar type")
}
