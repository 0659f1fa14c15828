//! Discrete-event network model.
//!
//! Time is kept in integer nanoseconds. Every directed link draws its
//! bandwidth once per iteration: with probability `p` it drops to
//! `baseline / divisor`, otherwise it runs at the baseline. The draw is a pure
//! function of `(seed, iteration, link)`, so runs replay exactly. Messages on
//! the same link do not contend with each other.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{MessageKind, PartyId};

pub type SimTime = u64;

pub const NS_PER_SEC: f64 = 1e9;

/// Seconds to nanoseconds, rounded to nearest.
pub fn secs_to_ns(s: f64) -> SimTime {
    debug_assert!(s >= 0.0 && s.is_finite());
    (s * NS_PER_SEC).round() as SimTime
}

pub fn ns_to_secs(ns: SimTime) -> f64 {
    ns as f64 / NS_PER_SEC
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowdownScope {
    /// Each directed link draws independently.
    #[default]
    PerLink,
    /// Each party draws once per iteration; a link is slow when either end is.
    PerParty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    /// Bits per second.
    pub baseline_bandwidth: f64,
    pub slowdown_prob: f64,
    pub bottleneck_divisor: f64,
    /// Constant per-message latency in seconds.
    pub latency: f64,
    pub scope: SlowdownScope,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            baseline_bandwidth: 10e6,
            slowdown_prob: 0.0,
            bottleneck_divisor: 10.0,
            latency: 0.0,
            scope: SlowdownScope::PerLink,
        }
    }
}

/// Outcome of putting one message on a link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transfer {
    pub sent_at: SimTime,
    pub deliver_at: SimTime,
    pub bandwidth: f64,
    pub slow: bool,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_bandwidth > 0.0 && self.baseline_bandwidth.is_finite()) {
            return Err(Error::Config("baseline_bandwidth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.slowdown_prob) {
            return Err(Error::Config(format!(
                "slowdown_prob must be in [0, 1], got {}",
                self.slowdown_prob
            )));
        }
        if !(self.bottleneck_divisor > 1.0 && self.bottleneck_divisor.is_finite()) {
            return Err(Error::Config("bottleneck_divisor must exceed 1".into()));
        }
        if !(self.latency >= 0.0 && self.latency.is_finite()) {
            return Err(Error::Config("latency must be non-negative".into()));
        }
        Ok(())
    }

    fn draw(&self, seed: u64, iteration: u32, a: u32, b: u32) -> bool {
        if self.slowdown_prob <= 0.0 {
            return false;
        }
        let key = mix(mix(mix(seed) ^ iteration as u64) ^ ((a as u64) << 32 | b as u64));
        ChaCha8Rng::seed_from_u64(key).gen::<f64>() < self.slowdown_prob
    }

    /// Whether the `src -> dst` link is in its slow state during `iteration`.
    pub fn is_slow(&self, seed: u64, iteration: u32, src: PartyId, dst: PartyId) -> bool {
        match self.scope {
            SlowdownScope::PerLink => self.draw(seed, iteration, src.0, dst.0),
            SlowdownScope::PerParty => {
                self.draw(seed, iteration, src.0, u32::MAX - 1)
                    || self.draw(seed, iteration, dst.0, u32::MAX - 1)
            }
        }
    }

    pub fn bandwidth(&self, seed: u64, iteration: u32, src: PartyId, dst: PartyId) -> f64 {
        if self.is_slow(seed, iteration, src, dst) {
            self.baseline_bandwidth / self.bottleneck_divisor
        } else {
            self.baseline_bandwidth
        }
    }

    /// Transfer time of `bytes` at `bandwidth`, plus the constant latency.
    pub fn transfer_ns(&self, bytes: usize, bandwidth: f64) -> SimTime {
        secs_to_ns(bytes as f64 * 8.0 / bandwidth + self.latency)
    }

    /// Sends `bytes` over `src -> dst` at time `now`.
    pub fn send(
        &self,
        seed: u64,
        iteration: u32,
        src: PartyId,
        dst: PartyId,
        bytes: usize,
        now: SimTime,
    ) -> Transfer {
        let slow = self.is_slow(seed, iteration, src, dst);
        let bandwidth = if slow {
            self.baseline_bandwidth / self.bottleneck_divisor
        } else {
            self.baseline_bandwidth
        };
        Transfer {
            sent_at: now,
            deliver_at: now + self.transfer_ns(bytes, bandwidth),
            bandwidth,
            slow,
        }
    }
}

/// Event ordering class at equal timestamps: deliveries before wake-ups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventClass {
    Deliver = 0,
    Wake = 1,
}

/// Priority queue popping events in `(time, class, insertion order)` order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(SimTime, EventClass, u64)>>,
    slots: Vec<Option<E>>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, class: EventClass, event: E) {
        self.heap.push(Reverse((at, class, self.seq)));
        self.slots.push(Some(event));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(SimTime, EventClass, E)> {
        let Reverse((at, class, seq)) = self.heap.pop()?;
        let event = self.slots[seq as usize].take().expect("event popped twice");
        Some((at, class, event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Monotone simulated clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.now, "clock moved backwards: {} -> {t}", self.now);
        self.now = t;
    }
}

/// A message in flight.
#[derive(Clone, Debug)]
pub struct SimEvent<M> {
    pub id: u64,
    pub src: PartyId,
    pub dst: PartyId,
    pub sent_at: SimTime,
    pub deliver_at: SimTime,
    pub bytes: usize,
    pub message: M,
}

/// One line of the message trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    pub src: PartyId,
    pub dst: PartyId,
    pub kind: MessageKind,
    pub iteration: u32,
    pub bytes: usize,
    pub sent_ns: SimTime,
    pub deliver_ns: SimTime,
    pub slow: bool,
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Monte Carlo estimate of the guest's per-round wait: in each round `hosts`
/// hosts send `payload_bytes` to the guest at time 0 over independently drawn
/// links, and the guest proceeds on the `(hosts - beta)`-th arrival.
/// Returns the wait of every round in seconds.
pub fn simulate_round_waits(
    link: &LinkModel,
    seed: u64,
    hosts: u32,
    beta: u32,
    payload_bytes: usize,
    rounds: u32,
) -> Result<Vec<f64>> {
    if hosts == 0 || beta >= hosts {
        return Err(Error::Config(format!(
            "need 0 <= beta < hosts, got beta {beta} with {hosts} hosts"
        )));
    }
    link.validate()?;
    let need = (hosts - beta) as usize;
    let mut waits = Vec::with_capacity(rounds as usize);
    for round in 1..=rounds {
        let mut queue = EventQueue::new();
        for k in 1..=hosts {
            let t = link.send(seed, round, PartyId::host(k), PartyId::GUEST, payload_bytes, 0);
            queue.push(t.deliver_at, EventClass::Deliver, k);
        }
        let mut clock = SimClock::default();
        let mut arrived = 0;
        while let Some((at, _, _)) = queue.pop() {
            clock.advance_to(at);
            arrived += 1;
            if arrived == need {
                break;
            }
        }
        waits.push(ns_to_secs(clock.now()));
    }
    Ok(waits)
}

/// Expected `(hosts - beta)`-th order statistic of `hosts` iid transfer times
/// that take `fast` with probability `1 - p` and `slow` otherwise: the guest
/// waits `fast` exactly when at least `hosts - beta` links are fast.
pub fn expected_round_wait(hosts: u32, beta: u32, p: f64, fast: f64, slow: f64) -> f64 {
    let need = hosts - beta;
    let q = 1.0 - p;
    let mut p_enough_fast = 0.0;
    for f in need..=hosts {
        p_enough_fast += binomial(hosts, f) * q.powi(f as i32) * p.powi((hosts - f) as i32);
    }
    fast * p_enough_fast + slow * (1.0 - p_enough_fast)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
