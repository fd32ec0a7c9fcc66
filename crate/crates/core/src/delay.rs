//! Message channel that holds each packet for a sampled delay.
//!
//! Every packet gets its own delivery time, so random delays may reorder
//! traffic. `fifo` mode clamps delivery times to be non-decreasing instead.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Synthetic one-way delay trace, mean 11.61 ms and standard deviation 3.29 ms.
pub const BUNDLED_TRACE: &str = include_str!("../data/synthetic_delay_trace.txt");

#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    None,
    Gaussian { mean: f64, std: f64 },
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Replays recorded delays in order, wrapping around.
    Trace(Arc<[f64]>),
}

impl DelayModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DelayModel::None => true,
            DelayModel::Gaussian { mean, std } => *mean >= 0.0 && *std >= 0.0,
            DelayModel::Constant(d) => *d >= 0.0,
            DelayModel::Uniform { lo, hi } => *lo >= 0.0 && hi >= lo,
            DelayModel::Trace(t) => !t.is_empty() && t.iter().all(|d| *d >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid delay model {self}")))
        }
    }

    pub fn trace_from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(DelayModel::Trace(parse_trace(&text)?.into()))
    }

    pub fn bundled_trace() -> Self {
        DelayModel::Trace(parse_trace(BUNDLED_TRACE).expect("bundled trace parses").into())
    }

    /// Short label used in tables and file names.
    pub fn label(&self) -> &'static str {
        match self {
            DelayModel::None => "none",
            DelayModel::Gaussian { .. } => "gaussian",
            DelayModel::Constant(_) => "constant",
            DelayModel::Uniform { .. } => "uniform",
            DelayModel::Trace(_) => "trace",
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayModel::None => write!(f, "none"),
            DelayModel::Gaussian { mean, std } => write!(f, "gaussian:{mean},{std}"),
            DelayModel::Constant(d) => write!(f, "constant:{d}"),
            DelayModel::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            DelayModel::Trace(t) => write!(f, "trace:<{} samples>", t.len()),
        }
    }
}

/// Parses a duration in seconds; a `ms` suffix selects milliseconds.
fn parse_seconds(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, scale) = match s.strip_suffix("ms") {
        Some(n) => (n, 1e-3),
        None => (s.strip_suffix('s').unwrap_or(s), 1.0),
    };
    num.trim()
        .parse::<f64>()
        .map(|v| v * scale)
        .map_err(|_| Error::Parse(format!("bad duration {s:?}")))
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("expected two comma-separated values, got {s:?}")))?;
    Ok((parse_seconds(a)?, parse_seconds(b)?))
}

impl FromStr for DelayModel {
    type Err = Error;

    /// `none | gaussian:MEAN,STD | constant:D | uniform:LO,HI | trace:FILE`
    /// (seconds unless suffixed with `ms`; `trace:bundled` selects the bundled trace).
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let model = match kind.trim().to_ascii_lowercase().as_str() {
            "none" => DelayModel::None,
            "gaussian" => {
                let (mean, std) = parse_pair(args)?;
                DelayModel::Gaussian { mean, std }
            }
            "constant" => DelayModel::Constant(parse_seconds(args)?),
            "uniform" => {
                let (lo, hi) = parse_pair(args)?;
                DelayModel::Uniform { lo, hi }
            }
            "trace" if args == "bundled" => DelayModel::bundled_trace(),
            "trace" => DelayModel::trace_from_file(args)?,
            other => return Err(Error::Parse(format!("unknown delay model {other:?}"))),
        };
        model.validate()?;
        Ok(model)
    }
}

/// One delay per line in seconds; `#` starts a comment line.
pub fn parse_trace(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Parse(format!("trace line {}: {line:?}", no + 1)))?;
        if !(v >= 0.0) {
            return Err(Error::Parse(format!("trace line {}: negative delay", no + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse("trace has no samples".into()));
    }
    Ok(out)
}

/// A delay model with its random stream and trace cursor.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    model: DelayModel,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl DelaySampler {
    pub fn new(model: DelayModel, seed: u64) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cursor: 0,
        }
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    pub fn sample(&mut self) -> f64 {
        match &self.model {
            DelayModel::None => 0.0,
            DelayModel::Constant(d) => *d,
            DelayModel::Uniform { lo, hi } => {
                if hi > lo {
                    self.rng.random_range(*lo..=*hi)
                } else {
                    *lo
                }
            }
            DelayModel::Gaussian { mean, std } => {
                if *std == 0.0 {
                    return mean.max(0.0);
                }
                let normal = Normal::new(*mean, *std).expect("validated gaussian");
                loop {
                    let d = normal.sample(&mut self.rng);
                    if d >= 0.0 {
                        return d;
                    }
                }
            }
            DelayModel::Trace(t) => {
                let d = t[self.cursor % t.len()];
                self.cursor = (self.cursor + 1) % t.len();
                d
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet<T> {
    pub payload: T,
    pub send_time: f64,
    pub deliver_time: f64,
}

struct Queued<T> {
    packet: Packet<T>,
    order: u64,
}

impl<T> PartialEq for Queued<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T> Eq for Queued<T> {}
impl<T> PartialOrd for Queued<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Queued<T> {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest delivery.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .packet
            .deliver_time
            .total_cmp(&self.packet.deliver_time)
            .then(other.order.cmp(&self.order))
    }
}

/// One direction of a delayed link.
pub struct DelayChannel<T> {
    sampler: DelaySampler,
    queue: BinaryHeap<Queued<T>>,
    fifo: bool,
    last_send: f64,
    last_deliver: f64,
    sent: u64,
    delivered: u64,
}

impl<T> DelayChannel<T> {
    pub fn new(model: DelayModel, seed: u64) -> Self {
        Self {
            sampler: DelaySampler::new(model, seed),
            queue: BinaryHeap::new(),
            fifo: false,
            last_send: f64::NEG_INFINITY,
            last_deliver: f64::NEG_INFINITY,
            sent: 0,
            delivered: 0,
        }
    }

    /// Never deliver a packet before one sent earlier.
    pub fn with_fifo(mut self, fifo: bool) -> Self {
        self.fifo = fifo;
        self
    }

    pub fn model(&self) -> &DelayModel {
        self.sampler.model()
    }

    /// Swaps the delay model; packets already in flight keep their times.
    pub fn set_model(&mut self, model: DelayModel, seed: u64) {
        self.sampler = DelaySampler::new(model, seed);
    }

    /// Enqueues `payload` and returns its delivery time.
    pub fn send(&mut self, payload: T, now: f64) -> f64 {
        debug_assert!(now >= self.last_send, "send clock went backwards");
        self.last_send = now;
        let mut deliver_time = now + self.sampler.sample();
        if self.fifo {
            deliver_time = deliver_time.max(self.last_deliver);
            self.last_deliver = deliver_time;
        }
        self.queue.push(Queued {
            packet: Packet {
                payload,
                send_time: now,
                deliver_time,
            },
            order: self.sent,
        });
        self.sent += 1;
        deliver_time
    }

    /// Removes every packet due at or before `now`, earliest first.
    pub fn poll(&mut self, now: f64) -> Vec<Packet<T>> {
        let mut out = Vec::new();
        while self
            .queue
            .peek()
            .is_some_and(|q| q.packet.deliver_time <= now)
        {
            out.push(self.queue.pop().expect("peeked").packet);
        }
        self.delivered += out.len() as u64;
        out
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}

/// A channel handle usable from a producer and a consumer thread.
pub struct SharedDelayChannel<T>(Arc<Mutex<DelayChannel<T>>>);

impl<T> Clone for SharedDelayChannel<T> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<T> SharedDelayChannel<T> {
    pub fn new(channel: DelayChannel<T>) -> Self {
        Self(Arc::new(Mutex::new(channel)))
    }

    pub fn send(&self, payload: T, now: f64) -> f64 {
        self.0.lock().expect("channel poisoned").send(payload, now)
    }

    pub fn poll(&self, now: f64) -> Vec<Packet<T>> {
        self.0.lock().expect("channel poisoned").poll(now)
    }

    pub fn set_model(&self, model: DelayModel, seed: u64) {
        self.0.lock().expect("channel poisoned").set_model(model, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn constant_and_none() {
        let mut s = DelaySampler::new(DelayModel::Constant(0.2), 1);
        assert!((0..100).all(|_| s.sample() == 0.2));
        let mut s = DelaySampler::new(DelayModel::None, 1);
        assert!((0..100).all(|_| s.sample() == 0.0));
    }

    #[test]
    fn gaussian_monte_carlo() {
        let mut s = DelaySampler::new(DelayModel::Gaussian { mean: 0.05, std: 0.02 }, 42);
        let xs: Vec<f64> = (0..100_000).map(|_| s.sample()).collect();
        assert!(xs.iter().all(|x| *x >= 0.0));
        let (mean, std) = moments(&xs);
        assert!((mean - 0.05).abs() < 0.001, "mean {mean}");
        assert!((std - 0.02).abs() < 0.002, "std {std}");
    }

    #[test]
    fn threshold_delivery() {
        let mut ch = DelayChannel::new(DelayModel::Constant(0.2), 0);
        ch.send("a", 0.0);
        assert!(ch.poll(0.19).is_empty());
        let got = ch.poll(0.20);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload, "a");
    }

    #[test]
    fn undelayed_is_fifo() {
        let mut ch = DelayChannel::new(DelayModel::None, 0);
        ch.send(1, 0.0);
        ch.send(2, 0.01);
        let got: Vec<i32> = ch.poll(1.0).into_iter().map(|p| p.payload).collect();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn ties_break_by_send_order() {
        let mut ch = DelayChannel::new(DelayModel::None, 0);
        for i in 0..5 {
            ch.send(i, 1.0);
        }
        let got: Vec<i32> = ch.poll(1.0).into_iter().map(|p| p.payload).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn hold_per_message_reorders() {
        let trace = DelayModel::Trace(vec![0.3, 0.1].into());
        let mut ch = DelayChannel::new(trace.clone(), 0);
        ch.send("first", 0.0);
        ch.send("second", 0.05);
        let got: Vec<&str> = ch.poll(1.0).into_iter().map(|p| p.payload).collect();
        assert_eq!(got, vec!["second", "first"]);

        let mut ch = DelayChannel::new(trace, 0).with_fifo(true);
        ch.send("first", 0.0);
        ch.send("second", 0.05);
        let got: Vec<&str> = ch.poll(1.0).into_iter().map(|p| p.payload).collect();
        assert_eq!(got, vec!["first", "second"]);
    }

    #[test]
    fn parse_models() {
        assert_eq!("none".parse::<DelayModel>().unwrap(), DelayModel::None);
        assert_eq!(
            "gaussian:0.05,0.02".parse::<DelayModel>().unwrap(),
            DelayModel::Gaussian { mean: 0.05, std: 0.02 }
        );
        assert_eq!("constant:200ms".parse::<DelayModel>().unwrap(), DelayModel::Constant(0.2));
        assert_eq!(
            "uniform:50ms,200ms".parse::<DelayModel>().unwrap(),
            DelayModel::Uniform { lo: 0.05, hi: 0.2 }
        );
        assert!("uniform:0.2,0.1".parse::<DelayModel>().is_err());
        assert!("constant:-1".parse::<DelayModel>().is_err());
        assert!("pareto:1".parse::<DelayModel>().is_err());
        assert!(matches!("trace:bundled".parse::<DelayModel>().unwrap(), DelayModel::Trace(_)));
    }

    #[test]
    fn trace_format() {
        let t = parse_trace("# header\n0.01\n\n  0.02 \n# c\n0.03\n").unwrap();
        assert_eq!(t, vec![0.01, 0.02, 0.03]);
        assert!(parse_trace("# only comments\n").is_err());
        assert!(parse_trace("0.1\nabc\n").is_err());
        assert!(parse_trace("-0.1\n").is_err());
    }

    #[test]
    fn trace_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "# synthetic\n0.5\n0.25\n").unwrap();
        let m = DelayModel::trace_from_file(&path).unwrap();
        let mut s = DelaySampler::new(m, 0);
        assert_eq!([s.sample(), s.sample(), s.sample()], [0.5, 0.25, 0.5]);
    }

    #[test]
    fn bundled_trace_statistics() {
        let DelayModel::Trace(t) = DelayModel::bundled_trace() else {
            unreachable!()
        };
        assert!(BUNDLED_TRACE.lines().next().unwrap().contains("synthetic"));
        let (mean, std) = moments(&t);
        assert!((mean - 0.01161).abs() < 1e-5, "{mean}");
        assert!((std - 0.00329).abs() < 1e-5, "{std}");
    }

    #[test]
    fn shared_channel_two_threads() {
        let ch = SharedDelayChannel::new(DelayChannel::new(DelayModel::Uniform { lo: 0.0, hi: 0.01 }, 3));
        let producer = ch.clone();
        let h = std::thread::spawn(move || {
            for i in 0..1000u32 {
                producer.send(i, i as f64 * 1e-3);
            }
        });
        let mut got = Vec::new();
        let mut t = 0.0;
        while got.len() < 1000 {
            got.extend(ch.poll(t).into_iter().map(|p| p.payload));
            t += 1e-3;
            if t > 100.0 {
                break;
            }
        }
        h.join().unwrap();
        got.extend(ch.poll(f64::INFINITY).into_iter().map(|p| p.payload));
        got.sort();
        assert_eq!(got, (0..1000).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn single_entry_trace_equals_constant(d in 0.0f64..1.0, times in prop::collection::vec(0.0f64..0.1, 1..50)) {
            let mut a = DelayChannel::new(DelayModel::Trace(vec![d].into()), 0);
            let mut b = DelayChannel::new(DelayModel::Constant(d), 0);
            let mut now = 0.0;
            for (i, dt) in times.iter().enumerate() {
                now += dt;
                prop_assert_eq!(a.send(i, now), b.send(i, now));
            }
            prop_assert_eq!(a.poll(f64::INFINITY), b.poll(f64::INFINITY));
        }

        #[test]
        fn constant_delay_preserves_order(d in 0.0f64..0.5, times in prop::collection::vec(0.0f64..0.1, 1..50)) {
            let mut ch = DelayChannel::new(DelayModel::Constant(d), 0);
            let mut now = 0.0;
            for (i, dt) in times.iter().enumerate() {
                now += dt;
                ch.send(i, now);
            }
            let got: Vec<usize> = ch.poll(f64::INFINITY).into_iter().map(|p| p.payload).collect();
            prop_assert_eq!(got, (0..times.len()).collect::<Vec<_>>());
        }
    }
}
