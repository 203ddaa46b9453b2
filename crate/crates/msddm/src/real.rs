//! Scalar abstraction: the whole analytic core is generic over the
//! floating-point type through this trait.

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar usable by every solver in this crate: `f32` or `f64`.
///
/// The two associated tolerances scale with the precision of the type; all
/// closed-form branches and series truncations consult them.
pub trait Real:
    Float + FloatConst + FromPrimitive + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    /// Relative tolerance at which infinite image/series sums are truncated.
    fn series_tol() -> Self;

    /// `|snr * z|` below this switches to the zero-drift branch of the
    /// closed forms (the drifted expressions are 0/0 at `a = 0`).
    fn degenerate_drift_tol() -> Self;
}

impl Real for f64 {
    fn series_tol() -> f64 {
        1e-12
    }
    fn degenerate_drift_tol() -> f64 {
        1e-8
    }
}

impl Real for f32 {
    fn series_tol() -> f32 {
        1e-6
    }
    fn degenerate_drift_tol() -> f32 {
        1e-4
    }
}

/// Shorthand for embedding an `f64` constant into a generic scalar.
#[inline]
pub(crate) fn c<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("constant not representable in scalar type")
}
