//! Robust summaries.

use alloc::vec::Vec;

/// Consistency constant making the MAD estimate σ under normality.
pub const MAD_SCALE: f64 = 1.4826;

/// Median; NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scaled median absolute deviation `1.4826 × med|x − med(x)|`.
pub fn mad(xs: &[f64]) -> f64 {
    let m = median(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    MAD_SCALE * median(&dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert!((mad(&[1.0, 2.0, 3.0, 4.0, 100.0]) - MAD_SCALE).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn order_invariant(mut xs in proptest::collection::vec(-1e3f64..1e3, 1..40), seed in any::<u64>()) {
            let a = (median(&xs), mad(&xs));
            let n = xs.len();
            xs.rotate_left((seed as usize) % n);
            xs.reverse();
            prop_assert_eq!(a, (median(&xs), mad(&xs)));
        }
    }
}
