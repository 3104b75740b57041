//! Scalar abstraction shared by every solver.
//!
//! All numerical routines are generic over [`Scalar`], which is implemented
//! for `f32` and `f64`. The associated tolerances are stated in `f64` and
//! converted on use; the `f64` values are the reference ones, the `f32`
//! values are loosened to what single precision can honour.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Allowed deviation of a probability vector's total mass from one.
    const LAW_TOL: f64;
    /// Absolute grouping tolerance used when breaking ties in an argmin.
    const TIE_TOL: f64;
    /// Slack granted to `E[g(x_T)] <= a` before a law is declared infeasible.
    const FEASIBILITY_TOL: f64;
    /// Per-coordinate rounding step used to de-duplicate probability laws.
    const LAW_QUANTUM: f64;

    /// Converts an `f64` literal. Panics only for values not representable
    /// at all, which never happens for the finite constants used here.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Scalar for f64 {
    const LAW_TOL: f64 = 1e-12;
    const TIE_TOL: f64 = 1e-12;
    const FEASIBILITY_TOL: f64 = 1e-9;
    const LAW_QUANTUM: f64 = 1e-12;
}

impl Scalar for f32 {
    const LAW_TOL: f64 = 1e-5;
    const TIE_TOL: f64 = 1e-6;
    const FEASIBILITY_TOL: f64 = 1e-5;
    const LAW_QUANTUM: f64 = 1e-6;
}
