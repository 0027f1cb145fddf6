//! Per-step arm selection rules.

use crate::environment::argmax_lowest;
use crate::linalg::dot;

/// Round-robin forced arm (0-based) for the `arrival_count`-th arrival at an
/// instance: `arrival_count mod K`.
pub fn forced_arm(arrival_count: usize, arms: usize) -> usize {
    assert!(arrival_count >= 1, "arrival counts start at 1");
    arrival_count % arms
}

/// Arms whose forced-sample reward estimate is within `h/2` of the best.
pub fn filter_arms<B: AsRef<[f64]>>(x: &[f64], forced: &[B], h: f64) -> Vec<usize> {
    let rewards: Vec<f64> = forced.iter().map(|b| dot(x, b.as_ref())).collect();
    let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - h / 2.0;
    rewards
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Argmax over `candidates` of the all-sample estimate, falling back to the
/// forced estimate for arms without one. Ties go to the lowest arm index.
pub fn choose_arm<B: AsRef<[f64]>>(
    x: &[f64],
    candidates: &[usize],
    all_sample: &[Option<Vec<f64>>],
    forced: &[B],
) -> usize {
    let scores = candidates.iter().map(|&k| {
        let beta = all_sample[k].as_deref().unwrap_or(forced[k].as_ref());
        dot(x, beta)
    });
    candidates[argmax_lowest(scores)]
}
