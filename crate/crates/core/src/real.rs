//! Scalar abstraction for the numeric kernels.
//!
//! Everything rate- or time-valued is generic over [`Real`] so the same
//! code instantiates at `f32` and `f64`. The crate-root aliases pin `f64`,
//! which is what the experiment harness uses.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

/// Floating-point scalar usable by the simulation kernels.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + fmt::Display
    + fmt::Debug
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Natural log of the gamma function.
    fn ln_gamma(self) -> Self;

    /// Default relative tolerance for adaptive quadrature at this width.
    fn quad_tol() -> Self;

    /// Uniform draw in `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from `f64` for constants.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant conversion")
    }

    /// Conversion from a usize count.
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count conversion")
    }

    /// `f64` view, for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f64 {
    fn ln_gamma(self) -> Self {
        libm::lgamma(self)
    }

    fn quad_tol() -> Self {
        1e-10
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

impl Real for f32 {
    fn ln_gamma(self) -> Self {
        libm::lgamma(self as f64) as f32
    }

    fn quad_tol() -> Self {
        1e-5
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

/// Exponential holding time with the given rate.
///
/// Inverse-CDF on `1 - U` so a zero uniform draw maps to time zero rather
/// than infinity.
pub fn exp_time<F: Real, R: Rng + ?Sized>(rate: F, rng: &mut R) -> F {
    debug_assert!(rate > F::zero());
    let u = F::sample_unit(rng);
    -(F::one() - u).ln() / rate
}

/// log of the Beta function `B(p, q)`.
pub fn ln_beta<F: Real>(p: F, q: F) -> F {
    p.ln_gamma() + q.ln_gamma() - (p + q).ln_gamma()
}

/// log of the binomial coefficient `C(n, k)`.
pub fn ln_choose<F: Real>(n: u64, k: u64) -> F {
    debug_assert!(k <= n);
    let nf = F::of(n as f64);
    let kf = F::of(k as f64);
    (nf + F::one()).ln_gamma() - (kf + F::one()).ln_gamma() - (nf - kf + F::one()).ln_gamma()
}
