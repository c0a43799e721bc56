//! Deterministic pairwise summation.
//!
//! The split points depend only on the slice length, so the result is the
//! same no matter how many threads produced the terms.

use num_complex::Complex64;

const LEAF: usize = 32;

pub fn tree_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
}

pub fn tree_sum_c(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    tree_sum_c(&xs[..mid]) + tree_sum_c(&xs[mid..])
}

/// Tree sum of `f(i)` for `i in 0..n` without materializing more than needed.
pub fn tree_sum_by<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= LEAF {
            return (lo..hi).map(f).sum();
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    go(0, n, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&xs), 45.0);
    }

    #[test]
    fn by_index_agrees_with_slice() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1013) as f64 * 1e-3).collect();
        assert_eq!(tree_sum(&xs), tree_sum_by(xs.len(), |i| xs[i]));
    }

    #[test]
    fn pairwise_beats_naive_on_cancellation() {
        let mut xs = vec![1.0; 1 << 20];
        xs.push(1e-10);
        let exact = (1u64 << 20) as f64 + 1e-10;
        assert!((tree_sum(&xs) - exact).abs() < 1e-9);
    }
}
