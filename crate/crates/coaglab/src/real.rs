//! Scalar abstraction for the numerical core.
//!
//! Every floating-point computation in this crate is generic over [`Real`],
//! which is satisfied by `f32` and `f64`. The CLI and the file formats pin
//! `f64`; the generic core exists so that desk experiments can trade
//! precision for speed without touching the algorithms.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Display
    + LowerExp
    + Debug
    + FromStr
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Shortest decimal representation that round-trips to the same bits.
    fn format_roundtrip(&self) -> String {
        format!("{self}")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar type.
///
/// Panics only if the target type cannot represent any `f64` at all,
/// which does not happen for the supported scalars.
#[inline]
pub fn lit<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("f64 literal must convert to the scalar type")
}

/// Converts a `usize` count into the working scalar type.
#[inline]
pub fn count<R: Real>(n: usize) -> R {
    R::from_usize(n).expect("usize must convert to the scalar type")
}
