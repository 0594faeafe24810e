//! Control-loop timing arithmetic and statistics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Period of a loop running at `rate_hz`, in nanoseconds (rounded).
pub fn period_ns(rate_hz: f64) -> u64 {
    libm::round(NANOS_PER_SEC as f64 / rate_hz) as u64
}

/// Absolute-deadline schedule: tick `k` is due at `start + k * period`,
/// independent of when earlier ticks actually ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeadlineSchedule {
    start_ns: u64,
    period_ns: u64,
    tick: u64,
}

impl DeadlineSchedule {
    pub fn new(start_ns: u64, period_ns: u64) -> Self {
        assert!(period_ns > 0, "period must be positive");
        Self { start_ns, period_ns, tick: 0 }
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Deadline of the current tick.
    pub fn deadline(&self) -> u64 {
        self.start_ns + self.tick * self.period_ns
    }

    /// Advances to the next tick and returns its deadline. If `now_ns` is
    /// already more than a full period past that deadline, the missed ticks
    /// are skipped (counted in the return value) instead of bursting.
    pub fn advance(&mut self, now_ns: u64) -> (u64, u64) {
        self.tick += 1;
        let mut skipped = 0;
        while now_ns > self.deadline() + self.period_ns {
            self.tick += 1;
            skipped += 1;
        }
        (self.deadline(), skipped)
    }
}

/// One control tick as seen by the interface loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingSample {
    /// Tick dispatch instant.
    pub send_ts: u64,
    /// Instant the joint command was applied.
    pub apply_ts: u64,
    /// Capture instant of the keypoint frame behind the applied command;
    /// `None` when the tick re-applied a held command.
    pub capture_ts: Option<u64>,
}

impl TimingSample {
    pub fn latency_ns(&self) -> Option<u64> {
        self.capture_ts.map(|c| self.apply_ts.saturating_sub(c))
    }
}

/// `(ticks − 1) / (last − first)` over send instants.
pub fn achieved_hz(send_ts: &[u64]) -> Option<f64> {
    if send_ts.len() < 2 {
        return None;
    }
    let elapsed = send_ts[send_ts.len() - 1].checked_sub(send_ts[0])?;
    if elapsed == 0 {
        return None;
    }
    Some((send_ts.len() - 1) as f64 * NANOS_PER_SEC as f64 / elapsed as f64)
}

/// Population standard deviation of consecutive intervals, milliseconds.
pub fn jitter_ms(send_ts: &[u64]) -> Option<f64> {
    if send_ts.len() < 3 {
        return None;
    }
    let intervals: Vec<f64> = send_ts.windows(2).map(|w| (w[1] as f64 - w[0] as f64) / 1e6).collect();
    let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let var = intervals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / intervals.len() as f64;
    Some(math::sqrt(var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending slice, `pct` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = libm::ceil(pct / 100.0 * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarize_ms(values_ms: &[f64]) -> Option<LatencySummary> {
    if values_ms.is_empty() {
        return None;
    }
    let mut sorted = values_ms.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Some(LatencySummary {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: percentile_sorted(&sorted, 50.0),
        p95: percentile_sorted(&sorted, 95.0),
        p99: percentile_sorted(&sorted, 99.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn deadlines_do_not_drift() {
        let mut s = DeadlineSchedule::new(1_000, 10);
        assert_eq!(s.deadline(), 1_000);
        // running late does not push later deadlines back
        assert_eq!(s.advance(1_013), (1_010, 0));
        assert_eq!(s.advance(1_019), (1_020, 0));
        // a stall of several periods skips the missed ticks
        assert_eq!(s.advance(1_075), (1_070, 4));
    }

    #[test]
    fn rate_and_jitter_of_a_perfect_clock() {
        let ts: Vec<u64> = (0..31).map(|k| k * period_ns(30.0)).collect();
        assert!((achieved_hz(&ts).unwrap() - 30.0).abs() < 1e-6);
        assert!(jitter_ms(&ts).unwrap() < 1e-6);
        assert_eq!(achieved_hz(&[5]), None);
    }

    #[test]
    fn jitter_is_interval_std_dev() {
        // intervals 1 ms and 3 ms alternate: std dev 1 ms
        let ts = vec![0, 1_000_000, 4_000_000, 5_000_000, 8_000_000];
        assert!((jitter_ms(&ts).unwrap() - 1.0).abs() < 1e-12);
        let shifted: Vec<u64> = ts.iter().map(|t| t + 123_456_789).collect();
        assert_eq!(jitter_ms(&ts), jitter_ms(&shifted));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let s = summarize_ms(&v).unwrap();
        assert_eq!((s.p50, s.p95, s.p99), (50.0, 95.0, 99.0));
        assert!((s.mean - 50.5).abs() < 1e-12);
        assert!(summarize_ms(&[]).is_none());
    }
}
