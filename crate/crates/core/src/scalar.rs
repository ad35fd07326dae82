//! Scalar abstraction: everything numeric in this crate is generic over a
//! real scalar type, with `f64` as the default working precision.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Real scalar usable throughout the toolkit: `f32` or `f64`.
pub trait Scalar: RealField + FromPrimitive + Copy {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` literal into the working scalar type.
#[inline]
pub fn cvt<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert to the scalar type")
}

/// Convert the working scalar back to `f64` (for reports and f64-native
/// solvers).
#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    let y: f64 = x.to_subset().unwrap_or(f64::NAN);
    y
}
