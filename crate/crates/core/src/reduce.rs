//! Canonical reductions over particle data.
//!
//! Every scalar reduction in this crate goes through [`canonical_sum`]: the
//! summands are sorted into IEEE total order and then folded left to right.
//! The resulting value depends only on the multiset of inputs, so it is
//! permutation-invariant bit for bit and independent of how the inputs were
//! produced (serial loop, chunked parallel loop, any thread count).

use rayon::prelude::*;

use crate::Real;

/// Below this length a serial sort is used; the output is identical either
/// way, this is purely a work-size cutoff.
const PAR_SORT_CUTOFF: usize = 4096;

/// Sort `values` into IEEE total order in place.
pub fn canonical_order<T: Real>(values: &mut [T]) {
    if values.len() >= PAR_SORT_CUTOFF {
        values.par_sort_unstable_by(|a, b| T::total_order(*a, *b));
    } else {
        values.sort_unstable_by(|a, b| T::total_order(*a, *b));
    }
}

/// Sum of `values` in canonical order. Consumes the buffer order.
pub fn canonical_sum<T: Real>(values: &mut [T]) -> T {
    canonical_order(values);
    values.iter().fold(T::zero(), |acc, x| acc + *x)
}

/// Maximum in IEEE total order (NaN dominates), `-inf` for an empty slice.
pub fn total_max<T: Real>(values: &[T]) -> T {
    values.iter().fold(T::neg_infinity(), |acc, x| {
        if T::total_order(*x, acc) == std::cmp::Ordering::Greater {
            *x
        } else {
            acc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_permutation_invariant() {
        let mut a = vec![0.1f64, 0.7, -3.3, 1e-12, 2.5e3, -0.1];
        let mut b = vec![2.5e3f64, -0.1, 0.1, -3.3, 1e-12, 0.7];
        assert_eq!(
            canonical_sum(&mut a).to_bits(),
            canonical_sum(&mut b).to_bits()
        );
    }

    #[test]
    fn sum_handles_non_finite_deterministically() {
        let mut a = vec![1.0f64, f64::INFINITY, 2.0];
        assert!(canonical_sum(&mut a).is_infinite());
        let mut b = vec![f64::NAN, 1.0, 2.0];
        assert!(canonical_sum(&mut b).is_nan());
    }

    #[test]
    fn max_of_empty_is_neg_infinity() {
        assert_eq!(total_max::<f64>(&[]), f64::NEG_INFINITY);
    }
}
