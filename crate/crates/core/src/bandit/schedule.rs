use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Doubling batch schedule over time steps `1..=T`.
///
/// Batch 0 is the forced-sampling window `[1, B0]`; batch `m >= 1` covers
/// `(2^(m-1) B0, 2^m B0]`, with the final batch truncated at `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub horizon: usize,
    pub b0_size: usize,
    /// Last time step of each batch, starting with batch 0.
    ends: Vec<usize>,
}

impl BatchSchedule {
    /// Number of batches after the forced window.
    pub fn num_batches(&self) -> usize {
        self.ends.len() - 1
    }

    /// Inclusive `(start, end)` of batch `m`.
    pub fn bounds(&self, m: usize) -> (usize, usize) {
        let start = if m == 0 { 1 } else { self.ends[m - 1] + 1 };
        (start, self.ends[m])
    }

    pub fn end_of(&self, m: usize) -> usize {
        self.ends[m]
    }

    pub fn len_of(&self, m: usize) -> usize {
        let (s, e) = self.bounds(m);
        e + 1 - s
    }

    /// Batch containing step `t` (1-based).
    pub fn batch_of(&self, t: usize) -> usize {
        self.ends.partition_point(|&e| e < t)
    }

    pub fn in_forced_window(&self, t: usize) -> bool {
        t <= self.b0_size
    }
}

/// `B0 = ceil(q ln T)`, `M = ceil(log2(T / (q ln T)))`; batches that would
/// start past `T` are dropped.
pub fn build_schedule(horizon: usize, q: f64) -> Result<BatchSchedule> {
    if horizon < 2 {
        return Err(Error::InvalidConfig(format!("horizon must be at least 2, got {horizon}")));
    }
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidConfig(format!("q must be positive, got {q}")));
    }
    let t = horizon as f64;
    let b0_real = q * t.ln();
    if b0_real < 1.0 {
        return Err(Error::InvalidConfig(format!("q ln T = {b0_real} is below 1")));
    }
    if b0_real > t {
        return Err(Error::InvalidConfig(format!(
            "q ln T = {b0_real} exceeds the horizon {horizon}"
        )));
    }
    // Slack so that q ln T landing a hair above an integer does not round up.
    let b0 = (b0_real - 1e-9).ceil() as usize;
    let m_total = (t / b0_real).log2().ceil().max(0.0) as u32;
    let mut ends = vec![b0.min(horizon)];
    for m in 1..=m_total {
        let start = (b0 << (m - 1)) + 1;
        if start > horizon {
            break;
        }
        ends.push((b0 << m).min(horizon));
    }
    // ceil(q ln T) * 2^M >= T always holds; this keeps the invariant explicit.
    if *ends.last().expect("nonempty") < horizon {
        ends.push(horizon);
    }
    Ok(BatchSchedule {
        horizon,
        b0_size: b0,
        ends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schedule() {
        let s = build_schedule(40_000, 50.0).unwrap();
        assert_eq!(s.b0_size, 530);
        assert_eq!(s.num_batches(), 7);
        assert_eq!(s.bounds(1), (531, 1060));
        assert_eq!(s.len_of(2), 1060);
        assert_eq!(s.end_of(7), 40_000);
        assert_eq!(s.batch_of(530), 0);
        assert_eq!(s.batch_of(531), 1);
        assert_eq!(s.batch_of(40_000), 7);
    }

    #[test]
    fn two_b0_horizon_has_one_batch() {
        // q ln T = 10 exactly for T = 20 with q = 10 / ln 20.
        let q = 10.0 / 20f64.ln();
        let s = build_schedule(20, q).unwrap();
        assert_eq!(s.b0_size, 10);
        assert_eq!(s.num_batches(), 1);
        assert_eq!(s.bounds(1), (11, 20));
    }

    #[test]
    fn rejects_infeasible() {
        assert!(build_schedule(10, 100.0).is_err());
        assert!(build_schedule(1, 1.0).is_err());
        assert!(build_schedule(100, 0.0).is_err());
        assert!(build_schedule(100, 0.1).is_err());
    }
}
