//! Deterministic discrete-event core.
//!
//! A single global queue ordered by `(time, seq)` drives every subsystem.
//! Time is integer milliseconds so hour- and day-scale durations are exact.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since scenario start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(secs: u64) -> Self {
        SimTime(secs * 1000)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn plus(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }

    /// Duration from `earlier` to `self`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    RequestArrival,
    ServiceCompletion,
    HealthProbe,
    MonitorTick,
    ReplicationApply,
    BackupTick,
    FaultTrigger,
    ScaleEvaluation,
    RecoveryStep,
}

/// Anything that can ride the queue reports which of the fixed kinds it is.
pub trait Classify {
    fn kind(&self) -> EventKind;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: P,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event at {event} is in the past (clock is {clock})")]
    PastEvent { event: SimTime, clock: SimTime },
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.time, self.0.seq).cmp(&(other.0.time, other.0.seq))
    }
}

/// The processed-event stamp returned by [`Scheduler::run_until`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

/// Virtual clock plus event queue.
pub struct Scheduler<P> {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<P>>>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self {
            clock: SimTime::ZERO,
            next_seq: 1,
            heap: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueue `payload` at `time`, returning the assigned sequence number.
    pub fn schedule(&mut self, time: SimTime, payload: P) -> Result<u64, EngineError> {
        if time < self.clock {
            return Err(EngineError::PastEvent {
                event: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry(Event { time, seq, payload })));
        Ok(seq)
    }

    /// Schedule `delay` ms after the current clock. Never fails.
    pub fn schedule_in(&mut self, delay: u64, payload: P) -> u64 {
        let at = self.clock.plus(delay);
        self.schedule(at, payload)
            .expect("relative schedule is never in the past")
    }

    /// Pop the next event with `time <= end`, advancing the clock to it.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<P>> {
        match self.heap.peek() {
            Some(Reverse(Entry(ev))) if ev.time <= end => {}
            _ => return None,
        }
        let Reverse(Entry(ev)) = self.heap.pop()?;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        Some(ev)
    }

    /// Move the clock forward to `end` once no due events remain.
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.clock {
            self.clock = end;
        }
    }

    /// Process every event with `time <= end` in `(time, seq)` order.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> Vec<Stamp>
    where
        P: Classify,
        F: FnMut(&mut Self, Event<P>),
    {
        let mut trace = Vec::new();
        while let Some(ev) = self.pop_until(end) {
            trace.push(Stamp {
                time: ev.time,
                seq: ev.seq,
                kind: ev.payload.kind(),
            });
            handler(self, ev);
        }
        self.advance_to(end);
        trace
    }
}

/// Seeded random source. ChaCha gives the same stream on every platform.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Exponential draw with the given mean, by inverse CDF.
    pub fn exponential(&mut self, mean: f64) -> f64 {
        // 1 - U lies in (0, 1], so ln never sees zero.
        let u = 1.0 - self.uniform();
        -mean * u.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    /// Constant gap in ms.
    FixedInterval(u64),
    /// Mean arrivals per second.
    Poisson(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceTime {
    Fixed(u64),
    /// Mean in ms.
    Exponential(f64),
}

impl ServiceTime {
    pub fn sample(&self, rng: &mut RngState) -> u64 {
        match *self {
            ServiceTime::Fixed(ms) => ms,
            ServiceTime::Exponential(mean) => rng.exponential(mean).round() as u64,
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            ServiceTime::Fixed(ms) => ms as f64,
            ServiceTime::Exponential(mean) => mean,
        }
    }
}

/// Multiplies the arrival rate from `at` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub at_ms: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub arrival: Arrival,
    pub duration: SimTime,
    pub read_fraction: f64,
    pub service_time: ServiceTime,
    #[serde(default)]
    pub load_steps: Vec<LoadStep>,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(format!(
                "read_fraction {} outside [0,1]",
                self.read_fraction
            ));
        }
        if self.duration.0 == 0 {
            return Err("workload duration must be > 0".into());
        }
        match self.arrival {
            Arrival::FixedInterval(0) => return Err("fixed arrival interval must be > 0".into()),
            Arrival::Poisson(rate) if !(rate > 0.0) => {
                return Err(format!("poisson rate {rate} must be > 0"))
            }
            _ => {}
        }
        match self.service_time {
            ServiceTime::Exponential(mean) if !(mean > 0.0) => {
                return Err(format!("exponential service mean {mean} must be > 0"))
            }
            _ => {}
        }
        for step in &self.load_steps {
            if !(step.factor > 0.0) {
                return Err(format!("load step factor {} must be > 0", step.factor));
            }
        }
        Ok(())
    }

    /// Product of all load steps in effect at `now`.
    pub fn rate_factor(&self, now: SimTime) -> f64 {
        self.load_steps
            .iter()
            .filter(|s| s.at_ms <= now.0)
            .map(|s| s.factor)
            .product()
    }
}

/// Time of the arrival following `now`.
pub fn next_arrival(workload: &WorkloadSpec, rng: &mut RngState, now: SimTime) -> SimTime {
    let factor = workload.rate_factor(now);
    let gap = match workload.arrival {
        Arrival::FixedInterval(ms) => {
            if factor == 1.0 {
                ms
            } else {
                ((ms as f64 / factor).round() as u64).max(1)
            }
        }
        Arrival::Poisson(rate) => {
            let mean_ms = 1000.0 / (rate * factor);
            rng.exponential(mean_ms).round() as u64
        }
    };
    now.plus(gap)
}

/// One line of the exported trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: u64,
    pub seq: u64,
    pub kind: String,
    pub payload: serde_json::Value,
}

/// Write records as newline-delimited JSON.
pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, serde_json::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Tag(&'static str);

    impl Classify for Tag {
        fn kind(&self) -> EventKind {
            EventKind::RecoveryStep
        }
    }

    #[test]
    fn schedule_then_pop_at_time() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(5), Tag("a")).unwrap();
        let ev = s.pop_until(SimTime(100)).unwrap();
        assert_eq!(ev.time, SimTime(5));
        assert_eq!(s.now(), SimTime(5));
    }

    #[test]
    fn equal_times_break_ties_by_seq() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(7), Tag("e1")).unwrap();
        s.schedule(SimTime(7), Tag("e2")).unwrap();
        let mut seen = Vec::new();
        s.run_until(SimTime(10), |_, ev| seen.push(ev.payload.0));
        assert_eq!(seen, vec!["e1", "e2"]);
    }

    #[test]
    fn past_event_rejected() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        s.advance_to(SimTime(10));
        assert_eq!(
            s.schedule(SimTime(3), Tag("x")),
            Err(EngineError::PastEvent {
                event: SimTime(3),
                clock: SimTime(10)
            })
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<Tag> = Scheduler::new();
        let trace = s.run_until(SimTime(100), |_, _| {});
        assert!(trace.is_empty());
        assert_eq!(s.now(), SimTime(100));
    }

    #[test]
    fn run_until_stops_at_end() {
        let mut s = Scheduler::new();
        for t in [2, 9, 9, 15] {
            s.schedule(SimTime(t), Tag("e")).unwrap();
        }
        let trace = s.run_until(SimTime(10), |_, _| {});
        assert_eq!(trace.len(), 3);
        assert_eq!(s.now(), SimTime(10));
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn seqs_strictly_increase() {
        let mut s = Scheduler::new();
        let a = s.schedule(SimTime(50), Tag("a")).unwrap();
        let b = s.schedule(SimTime(1), Tag("b")).unwrap();
        let c = s.schedule_in(0, Tag("c"));
        assert!(a < b && b < c);
    }

    #[test]
    fn handler_may_schedule_follow_ups() {
        let mut s = Scheduler::new();
        s.schedule(SimTime(1), Tag("first")).unwrap();
        let trace = s.run_until(SimTime(10), |sched, ev| {
            if ev.payload.0 == "first" {
                sched.schedule_in(3, Tag("second"));
            }
        });
        assert_eq!(
            trace.iter().map(|t| t.time.0).collect::<Vec<_>>(),
            vec![1, 4]
        );
    }

    fn fixed(ms: u64) -> WorkloadSpec {
        WorkloadSpec {
            arrival: Arrival::FixedInterval(ms),
            duration: SimTime(1_000_000),
            read_fraction: 0.5,
            service_time: ServiceTime::Fixed(10),
            load_steps: vec![],
        }
    }

    #[test]
    fn fixed_interval_arrival() {
        let mut rng = RngState::new(1);
        assert_eq!(
            next_arrival(&fixed(100), &mut rng, SimTime(400)),
            SimTime(500)
        );
    }

    #[test]
    fn load_step_shrinks_gap() {
        let mut w = fixed(100);
        w.load_steps.push(LoadStep {
            at_ms: 1000,
            factor: 5.0,
        });
        let mut rng = RngState::new(1);
        assert_eq!(next_arrival(&w, &mut rng, SimTime(900)), SimTime(1000));
        assert_eq!(next_arrival(&w, &mut rng, SimTime(1000)), SimTime(1020));
    }

    #[test]
    fn same_seed_same_arrivals() {
        let mut w = fixed(1);
        w.arrival = Arrival::Poisson(10.0);
        let mut a = RngState::new(99);
        let mut b = RngState::new(99);
        let mut ta = SimTime::ZERO;
        let mut tb = SimTime::ZERO;
        for _ in 0..500 {
            ta = next_arrival(&w, &mut a, ta);
            tb = next_arrival(&w, &mut b, tb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn poisson_mean_gap_within_five_percent() {
        let mut w = fixed(1);
        w.arrival = Arrival::Poisson(10.0);
        let mut rng = RngState::new(2024);
        let mut now = SimTime::ZERO;
        let n = 10_000;
        for _ in 0..n {
            now = next_arrival(&w, &mut rng, now);
        }
        let mean = now.0 as f64 / n as f64;
        assert!((mean - 100.0).abs() / 100.0 < 0.05, "mean gap {mean}");
    }

    #[test]
    fn exponential_moments() {
        // Mean and variance of Exp(mean=m) are m and m^2.
        for seed in [1u64, 7, 42, 1234] {
            let mut rng = RngState::new(seed);
            let m = 100.0;
            let xs: Vec<f64> = (0..10_000).map(|_| rng.exponential(m)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!((mean - m).abs() / m < 0.05, "seed {seed} mean {mean}");
            assert!(
                (var - m * m).abs() / (m * m) < 0.15,
                "seed {seed} var {var}"
            );
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RngState::stream(5, 0);
        let mut b = RngState::stream(5, 1);
        assert_ne!(a.uniform(), b.uniform());
    }

    #[test]
    fn workload_validation() {
        let mut w = fixed(10);
        assert!(w.validate().is_ok());
        w.read_fraction = 1.5;
        assert!(w.validate().is_err());
        let mut w = fixed(10);
        w.arrival = Arrival::Poisson(0.0);
        assert!(w.validate().is_err());
        let mut w = fixed(10);
        w.duration = SimTime(0);
        assert!(w.validate().is_err());
    }

    #[test]
    fn trace_roundtrip() {
        let recs = vec![TraceRecord {
            time: 3,
            seq: 1,
            kind: "FaultTrigger".into(),
            payload: serde_json::json!({"target": "web-1"}),
        }];
        let mut buf = Vec::new();
        write_trace(&mut buf, &recs).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
