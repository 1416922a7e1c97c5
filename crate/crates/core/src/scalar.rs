//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Models, losses and metrics are written once against [`Scalar`] and
//! instantiated with `f64` (the default), `f32`, or [`crate::dual::Dual`]
//! when exact Hessian-vector products are needed.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the models and losses.
pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Converts an `f64` literal or hyperparameter into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    /// Primal value as `f64` (for dual numbers, the real part).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

/// Numerically stable `log(sum(exp(xs)))` using a max shift.
///
/// Returns negative infinity for an empty slice.
pub fn logsumexp<S: Scalar>(xs: &[S]) -> S {
    let max = xs.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    if max == S::infinity() {
        return max;
    }
    let sum = xs.iter().fold(S::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Softmax of `xs`, computed with the same max shift as [`logsumexp`].
pub fn softmax<S: Scalar>(xs: &[S]) -> Vec<S> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// Log-softmax of `xs`.
pub fn log_softmax<S: Scalar>(xs: &[S]) -> Vec<S> {
    let lse = logsumexp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}
