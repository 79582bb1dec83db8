use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar used by the geometry and neural-network code.
///
/// Implemented for `f32` and `f64`. The pipeline modules run on `f64`; the
/// crate-root aliases pick that instantiation.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
