//! Sliding-window round-trip-time statistics and the delay-adaptive margin.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use crate::error::{invalid, Result};
use crate::geometry::SafetyParams;

pub const DEFAULT_WINDOW: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSample {
    /// Measured round trip (s).
    pub rtt: f64,
    pub stamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RttStats {
    pub mean: f64,
    /// Sample standard deviation, n - 1 divisor.
    pub deviation: f64,
    pub count: usize,
}

/// Bounded FIFO of the most recent RTT samples.
#[derive(Debug, Clone)]
pub struct RttWindow {
    capacity: usize,
    samples: VecDeque<RttSample>,
}

impl Default for RttWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl RttWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &RttSample> {
        self.samples.iter()
    }

    pub fn push(&mut self, sample: RttSample) -> Result<()> {
        if !(sample.rtt >= 0.0) || !sample.rtt.is_finite() {
            return Err(invalid(format!("rtt must be a finite value >= 0, got {}", sample.rtt)));
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn estimate(&self) -> RttStats {
        let n = self.samples.len();
        if n == 0 {
            return RttStats::default();
        }
        let mean = self.samples.iter().map(|s| s.rtt).sum::<f64>() / n as f64;
        let deviation = if n < 2 {
            0.0
        } else {
            let ss: f64 = self.samples.iter().map(|s| (s.rtt - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        RttStats {
            mean,
            deviation,
            count: n,
        }
    }
}

/// Window shared between the RTT probe callback and the controller tick.
#[derive(Debug, Clone, Default)]
pub struct SharedRttWindow(Arc<Mutex<RttWindow>>);

impl SharedRttWindow {
    pub fn new(capacity: usize) -> Self {
        Self(Arc::new(Mutex::new(RttWindow::new(capacity))))
    }

    pub fn push(&self, sample: RttSample) -> Result<()> {
        self.0.lock().expect("rtt window poisoned").push(sample)
    }

    pub fn estimate(&self) -> RttStats {
        self.0.lock().expect("rtt window poisoned").estimate()
    }
}

/// Which latency terms enter the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarginTerms {
    pub deviation: bool,
    pub solve_time: bool,
}

impl Default for MarginTerms {
    fn default() -> Self {
        Self {
            deviation: true,
            solve_time: true,
        }
    }
}

/// Distance the robot can cover at top speed during the estimated
/// information-loop latency: `k_sigma * |v_max| * (mean + deviation + solve_time)`.
pub fn safety_margin(stats: &RttStats, params: &SafetyParams, solve_time: f64) -> f64 {
    safety_margin_with(stats, params, solve_time, MarginTerms::default())
}

pub fn safety_margin_with(
    stats: &RttStats,
    params: &SafetyParams,
    solve_time: f64,
    terms: MarginTerms,
) -> f64 {
    let mut latency = stats.mean.max(0.0);
    if terms.deviation {
        latency += stats.deviation.max(0.0);
    }
    if terms.solve_time {
        latency += solve_time.max(0.0);
    }
    (params.k_sigma * params.v_max_norm * latency).max(0.0)
}

/// Exponential smoothing of controller computation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveTimeFilter {
    factor: f64,
    value: Option<f64>,
}

impl Default for SolveTimeFilter {
    fn default() -> Self {
        Self::new(0.9)
    }
}

impl SolveTimeFilter {
    pub fn new(factor: f64) -> Self {
        Self {
            factor: factor.clamp(0.0, 1.0),
            value: None,
        }
    }

    pub fn update(&mut self, solve_time: f64) -> f64 {
        let v = match self.value {
            None => solve_time,
            Some(prev) => self.factor * prev + (1.0 - self.factor) * solve_time,
        };
        self.value = Some(v);
        v
    }

    pub fn value(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sample(rtt: f64) -> RttSample {
        RttSample { rtt, stamp: 0.0 }
    }

    fn sim_params() -> SafetyParams {
        SafetyParams {
            k_sigma: 1.0,
            v_max_norm: 0.87,
            ..SafetyParams::default()
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut w = RttWindow::new(30);
        for i in 0..31 {
            w.push(RttSample {
                rtt: 0.01,
                stamp: i as f64,
            })
            .unwrap();
        }
        assert_eq!(w.len(), 30);
        assert!(w.samples().all(|s| s.stamp != 0.0));
        assert_eq!(w.samples().next().unwrap().stamp, 1.0);
    }

    #[test]
    fn single_push() {
        let mut w = RttWindow::default();
        w.push(sample(0.1)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.estimate().deviation, 0.0);
    }

    #[test]
    fn negative_rtt_rejected() {
        let mut w = RttWindow::default();
        assert!(w.push(sample(-0.001)).is_err());
        assert!(w.is_empty());
    }

    #[test]
    fn constant_and_empty_windows() {
        let mut w = RttWindow::default();
        assert_eq!(w.estimate(), RttStats::default());
        for _ in 0..30 {
            w.push(sample(0.2)).unwrap();
        }
        let s = w.estimate();
        assert_relative_eq!(s.mean, 0.2, epsilon = 1e-15);
        assert!(s.deviation < 1e-15);
    }

    #[test]
    fn three_sample_statistics() {
        let mut w = RttWindow::default();
        for r in [0.05, 0.07, 0.09] {
            w.push(sample(r)).unwrap();
        }
        let s = w.estimate();
        assert_relative_eq!(s.mean, 0.07, epsilon = 1e-12);
        assert_relative_eq!(s.deviation, 0.02, epsilon = 1e-12);
        assert_eq!(s.count, 3);
    }

    #[test]
    fn margin_examples() {
        let p = sim_params();
        let constant = RttStats {
            mean: 0.2,
            deviation: 0.0,
            count: 30,
        };
        assert_relative_eq!(safety_margin(&constant, &p, 0.0), 0.174, epsilon = 1e-12);
        assert_eq!(safety_margin(&RttStats::default(), &p, 0.0), 0.0);
        let gaussian = RttStats {
            mean: 0.05,
            deviation: 0.02,
            count: 30,
        };
        assert_relative_eq!(safety_margin(&gaussian, &p, 0.0), 0.0609, epsilon = 1e-12);
    }

    #[test]
    fn margin_terms_are_switchable() {
        let p = sim_params();
        let s = RttStats {
            mean: 0.05,
            deviation: 0.02,
            count: 30,
        };
        let mean_only = MarginTerms {
            deviation: false,
            solve_time: false,
        };
        assert_relative_eq!(safety_margin_with(&s, &p, 0.3, mean_only), 0.87 * 0.05, epsilon = 1e-12);
    }

    #[test]
    fn solve_time_filter_smooths() {
        let mut f = SolveTimeFilter::default();
        assert_eq!(f.update(0.01), 0.01);
        assert_relative_eq!(f.update(0.02), 0.011, epsilon = 1e-15);
    }

    #[test]
    fn shared_window_across_threads() {
        let shared = SharedRttWindow::new(30);
        let writer = shared.clone();
        let h = std::thread::spawn(move || {
            for i in 0..100 {
                writer.push(sample(0.001 * i as f64)).unwrap();
            }
        });
        for _ in 0..100 {
            let s = shared.estimate();
            assert!(s.count <= 30);
        }
        h.join().unwrap();
        assert_eq!(shared.estimate().count, 30);
    }

    proptest! {
        #[test]
        fn margin_is_monotone_and_linear_in_gain(
            mean in 0.0f64..1.0, dev in 0.0f64..0.5, solve in 0.0f64..0.1,
            dmean in 0.0f64..0.2, ddev in 0.0f64..0.2, dsolve in 0.0f64..0.1,
            k in 0.0f64..3.0, v in 0.01f64..2.0,
        ) {
            let p = SafetyParams { k_sigma: k, v_max_norm: v, ..SafetyParams::default() };
            let s = RttStats { mean, deviation: dev, count: 30 };
            let base = safety_margin(&s, &p, solve);
            prop_assert!(base >= 0.0);
            let grown = RttStats { mean: mean + dmean, deviation: dev + ddev, count: 30 };
            prop_assert!(safety_margin(&grown, &p, solve + dsolve) >= base);
            let p_fast = SafetyParams { v_max_norm: v * 1.5, ..p };
            prop_assert!(safety_margin(&s, &p_fast, solve) >= base);
            let p2 = SafetyParams { k_sigma: 2.0 * k, ..p };
            prop_assert!((safety_margin(&s, &p2, solve) - 2.0 * base).abs() <= 1e-12 * (1.0 + base));
        }

        #[test]
        fn estimate_is_order_invariant(mut values in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let mut a = RttWindow::default();
            for v in &values { a.push(sample(*v)).unwrap(); }
            values.reverse();
            let mut b = RttWindow::default();
            for v in &values { b.push(sample(*v)).unwrap(); }
            let (sa, sb) = (a.estimate(), b.estimate());
            prop_assert!((sa.mean - sb.mean).abs() < 1e-12);
            prop_assert!((sa.deviation - sb.deviation).abs() < 1e-12);
        }

        #[test]
        fn identical_values_have_zero_deviation(v in 0.0f64..2.0, n in 1usize..40) {
            let mut w = RttWindow::default();
            for _ in 0..n { w.push(sample(v)).unwrap(); }
            let s = w.estimate();
            prop_assert!((s.mean - v).abs() <= 1e-12 * (1.0 + v));
            prop_assert!(s.deviation <= 1e-9);
        }
    }
}
