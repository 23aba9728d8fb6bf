//! Scalar abstraction for the numerical kernels.
//!
//! Splines, densities and the correlation parametrization are written once
//! over [`Real`] and instantiated for `f64` (the sampler) and `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable by the density and correlation code.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal; never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    /// Smallest step used by bisection-style solvers for this precision.
    fn solver_tol() -> Self;
}

impl Real for f64 {
    fn solver_tol() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn solver_tol() -> Self {
        1e-6
    }
}
