//! Comparisons between ensembles run on the same traces.

use gridspin::metrics::Estimate;

/// Mean and 95% interval of `a[i] - b[i]`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    Estimate::from_samples(a.iter().zip(b).map(|(x, y)| x - y))
}

pub fn mean(xs: &[f64]) -> f64 {
    Estimate::from_samples(xs.iter().copied()).mean
}

/// `1 - mean(after) / mean(before)` with a 95% half-width from the paired
/// differences.
pub fn relative_reduction(before: &[f64], after: &[f64]) -> (f64, f64) {
    let base = mean(before);
    let diff = paired_difference(before, after);
    (diff.mean / base, diff.ci95 / base)
}
