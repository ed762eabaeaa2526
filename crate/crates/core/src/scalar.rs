//! Floating-point element types accepted by the geometric primitives.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// An embedding component type: `f32` (what models emit and what the corpus
/// stores) or `f64` (synthetic tests, high precision inputs).
///
/// Every reduction in this crate widens to `f64` through [`Scalar::widen`],
/// regardless of the storage type.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Short name recorded in metadata.
    const NAME: &'static str;

    fn widen(self) -> f64;

    /// Rounds an `f64` accumulator back to the storage type.
    fn narrow(value: f64) -> Self;

    /// Bit pattern, widened to 64 bits, for bitwise comparisons.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn widen(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn bits(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }

    #[inline]
    fn bits(self) -> u64 {
        self.to_bits()
    }
}
