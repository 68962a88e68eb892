//! Scalar abstraction for the solver core.
//!
//! All iteration math is written against [`Scalar`] so the same code runs in
//! `f32` and `f64`. The experiment layer pins `f64`; see the type aliases at
//! the crate root.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable throughout the solver core.
///
/// Implemented by `f32` and `f64` via the blanket impl below.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Send + Sync + Debug + Display + LowerExp + 'static
{
    /// Cast an `f64` constant into this scalar type.
    #[inline]
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant converts to any Scalar")
    }
}

impl<T> Scalar for T where
    T: Float + NumAssign + FromPrimitive + Sum + Send + Sync + Debug + Display + LowerExp + 'static
{
}

/// Plain sequential dot product.
///
/// Left-to-right accumulation order is part of the contract: reference
/// implementations in tests reproduce engine arithmetic bit for bit.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc
}

/// Squared Euclidean norm with sequential accumulation.
#[inline]
pub fn norm_sq<F: Scalar>(v: &[F]) -> F {
    let mut acc = F::zero();
    for x in v.iter() {
        acc = acc + *x * *x;
    }
    acc
}

/// Euclidean norm.
#[inline]
pub fn norm<F: Scalar>(v: &[F]) -> F {
    norm_sq(v).sqrt()
}

/// Max-magnitude (sup) norm.
#[inline]
pub fn norm_inf<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_hand_value() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [4.0f64, -5.0, 6.0];
        assert_eq!(dot(&a, &b), 4.0 - 10.0 + 18.0);
    }

    #[test]
    fn norms_are_consistent() {
        let v = [3.0f64, -4.0];
        assert_eq!(norm_sq(&v), 25.0);
        assert_eq!(norm(&v), 5.0);
        assert_eq!(norm_inf(&v), 4.0);
    }

    #[test]
    fn works_in_f32() {
        let v = [3.0f32, 4.0];
        assert_eq!(norm(&v), 5.0f32);
        assert_eq!(f32::cast(0.5), 0.5f32);
    }
}
