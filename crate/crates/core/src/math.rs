//! Small numeric helpers shared across modules.

use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating-point type the model can run in (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Indices of `values` sorted ascending; ties keep input order.
pub fn stable_argsort(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert!(sigmoid(-800.0_f64) >= 0.0);
        assert_eq!(sigmoid(800.0_f64), 1.0);
        assert!((sigmoid(20.0_f64) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn softplus_matches_direct_formula() {
        for x in [-30.0, -1.0, 0.0, 2.5, 40.0] {
            let direct = (1.0 + f64::exp(x)).ln();
            assert!((softplus(x) - direct).abs() < 1e-12 * direct.max(1.0));
        }
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
