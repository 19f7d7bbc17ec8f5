//! Small numerically careful helpers shared by the model code.

use rayon::join;

/// Below this length a slice is summed sequentially; above it the two halves
/// may be summed on different threads. The split points are fixed, so the
/// result does not depend on scheduling.
const PAIRWISE_LEAF: usize = 64;
const PARALLEL_CUTOFF: usize = 4096;

/// Pairwise (cascade) summation. Deterministic regardless of how many threads
/// rayon uses: the recursion tree depends only on `values.len()`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    let (left, right) = values.split_at(mid);
    if values.len() >= PARALLEL_CUTOFF {
        let (a, b) = join(|| pairwise_sum(left), || pairwise_sum(right));
        a + b
    } else {
        pairwise_sum(left) + pairwise_sum(right)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{-x})`.
#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
