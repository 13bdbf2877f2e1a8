use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point type that scores are accumulated in: `f32` or `f64`.
///
/// Stored vectors are always `f32`; each component is widened to `S` before
/// multiplication so that `f64` scoring is exact up to the final rounding of
/// the sum.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn widen(v: f32) -> Self;

    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits in a float")
    }

    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn widen(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(v: f32) -> Self {
        v as f64
    }
}

/// Dot product of two `f32` slices accumulated in `S`, in index order.
#[inline]
pub fn dot<S: Scalar>(u: &[f32], v: &[f32]) -> S {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = S::zero();
    for (a, b) in u.iter().zip(v) {
        acc = acc + S::widen(*a) * S::widen(*b);
    }
    acc
}

/// Arithmetic mean; `None` on an empty slice.
pub fn mean<S: Scalar>(values: &[S]) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let total = values.iter().fold(S::zero(), |acc, v| acc + *v);
    Some(total / S::count(values.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_widens_before_multiplying() {
        let u = [1.0e-3_f32, 3.0];
        let v = [1.0e-3_f32, 4.0];
        let d: f64 = dot(&u, &v);
        let expected = (1.0e-3_f32 as f64) * (1.0e-3_f32 as f64) + 12.0;
        assert_eq!(d, expected);
        let d32: f32 = dot(&u, &v);
        assert!(((d32 as f64) - expected).abs() < 1e-5);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(mean::<f64>(&[]), None);
        assert_eq!(mean(&[0.2_f64, 0.4]), Some(0.30000000000000004));
        assert_eq!(mean(&[0.7_f32]), Some(0.7));
    }
}
