//! Scalar abstraction shared by every solver.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Probabilities below this contribute exactly zero to `p * log(p / q)` terms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Distortion assigned to a zero truth value; `exp(-745)` underflows to zero in f64.
pub const DISTORTION_CAP: f64 = 745.0;

/// Floating-point scalar the library is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Tolerance for "sums to one" checks: 1e-9 in f64, scaled by machine epsilon otherwise.
    fn norm_tol() -> Self {
        let scaled = Self::epsilon() * Self::lit(4.5e6);
        scaled.max(Self::lit(1e-9))
    }

    /// Threshold below which a probability counts as zero mass.
    fn prob_floor() -> Self {
        Self::lit(PROB_FLOOR)
    }

    fn distortion_cap() -> Self {
        Self::lit(DISTORTION_CAP)
    }

    /// `ln 2`, used to convert nats to bits.
    fn ln2() -> Self {
        Self::LN_2()
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `p * log2(p / q)` with the `0 log 0 = 0` convention below [`PROB_FLOOR`].
pub fn plogpq<S: Real>(p: S, q: S) -> S {
    if p <= S::prob_floor() {
        S::zero()
    } else {
        p * (p / q).log2()
    }
}

/// Numerically stable `ln Σ exp(v)`; returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<S: Real, I>(values: I) -> S
where
    I: IntoIterator<Item = S>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(S::neg_infinity(), |a, b| a.max(b));
    if max == S::neg_infinity() {
        return max;
    }
    if max == S::infinity() {
        return max;
    }
    let sum: S = it.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Formats a value with 17 significant digits (round-trip exact for f64).
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0000000000000000e0".into() } else { "0.0000000000000000e0".into() };
    }
    format!("{:.16e}", x)
}
