//! Scalar helpers shared by the scoring, selection and reporting code.
//!
//! Everything numeric in the crate is generic over [`Scalar`], so the same
//! selection and aggregation logic runs on `f32` or `f64`.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used for scores and statistics.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + 'static {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Arithmetic mean, `None` for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::from_usize(xs.len())?)
}

/// Population standard deviation (divides by `n`), `None` for an empty slice.
pub fn population_std<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    Some((ss / T::from_usize(xs.len())?).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_std_of_two_points() {
        assert_eq!(mean(&[1.0f64, 2.0]), Some(1.5));
        assert_eq!(population_std(&[1.0f64, 2.0]), Some(0.5));
    }

    #[test]
    fn constant_series_has_zero_spread() {
        assert_eq!(population_std(&[3.0f32, 3.0, 3.0]), Some(0.0));
    }

    #[test]
    fn empty_is_none() {
        assert_eq!(mean::<f64>(&[]), None);
        assert_eq!(population_std::<f64>(&[]), None);
    }
}
