//! Deterministic discrete-event simulation of a partially synchronous
//! network.
//!
//! Time is simulated milliseconds. Events are ordered by (time, sequence
//! number), so identical (seed, scenario) pairs replay bit-identically —
//! the foundation of every regression and safety check built on top.
//!
//! Links follow the partial-synchrony contract: before GST a message may
//! be dropped or delayed arbitrarily (seeded); from GST on, every
//! honest-to-honest transmission arrives within the known bound delta
//! (plus payload transfer time for messages larger than the bandwidth
//! window). The protocol never reads GST; only the link policy knows it.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::hash::{sha256_parts, Hash256};

pub type NodeId = usize;

/// Per-link delivery policy parameters.
#[derive(Debug, Clone, Copy)]
pub struct LinkPolicy {
    pub delta_ms: u64,
    pub gst_ms: u64,
    /// Transfer time component: payload bytes / bytes-per-ms.
    pub bytes_per_ms: u64,
    /// Probability a pre-GST message is dropped entirely.
    pub pre_gst_drop: f64,
    /// Pre-GST delays sample uniformly from [delta, mult * delta].
    pub pre_gst_delay_mult: u64,
}

impl Default for LinkPolicy {
    fn default() -> Self {
        LinkPolicy {
            delta_ms: 20,
            gst_ms: 0,
            bytes_per_ms: 1_000_000,
            pre_gst_drop: 0.2,
            pre_gst_delay_mult: 20,
        }
    }
}

impl LinkPolicy {
    pub fn transfer_ms(&self, bytes: usize) -> u64 {
        (bytes as u64).div_ceil(self.bytes_per_ms.max(1))
    }
}

/// Node behavior plugged into the event loop. Handlers run one at a time;
/// outputs are collected through [`Ctx`].
pub trait SimNode {
    type Timer: Clone + std::fmt::Debug;

    fn on_start(&mut self, ctx: &mut Ctx<Self::Timer>);
    fn on_message(&mut self, ctx: &mut Ctx<Self::Timer>, from: NodeId, payload: Vec<u8>);
    fn on_timer(&mut self, ctx: &mut Ctx<Self::Timer>, timer: Self::Timer);

    /// Honest nodes are held to the post-GST delivery bound by the
    /// monitor; Byzantine nodes are not.
    fn is_honest(&self) -> bool {
        true
    }
}

/// Handler-side effects: messages to send and timers to arm.
pub struct Ctx<T> {
    pub now: u64,
    node: NodeId,
    sends: Vec<(NodeId, Vec<u8>)>,
    timers: Vec<(u64, T)>,
}

impl<T> Ctx<T> {
    fn new(node: NodeId, now: u64) -> Ctx<T> {
        Ctx {
            now,
            node,
            sends: Vec::new(),
            timers: Vec::new(),
        }
    }

    /// Queue a message. Self-sends are a bug in node logic: local work
    /// should be done inline.
    pub fn send(&mut self, to: NodeId, payload: Vec<u8>) {
        debug_assert_ne!(to, self.node, "self-send from node {}", self.node);
        self.sends.push((to, payload));
    }

    pub fn set_timer(&mut self, delay_ms: u64, timer: T) {
        self.timers.push((self.now + delay_ms, timer));
    }
}

enum EventKind<T> {
    Deliver {
        from: NodeId,
        to: NodeId,
        payload: Vec<u8>,
        sent_at: u64,
    },
    Timer {
        node: NodeId,
        timer: T,
    },
}

struct Event<T> {
    at: u64,
    seq: u64,
    kind: EventKind<T>,
}

impl<T> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<T> Eq for Event<T> {}

impl<T> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Event<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Predicate satisfied at the given simulated time.
    Satisfied(u64),
    /// No more events; predicate still false.
    QueueEmpty(u64),
    /// Simulated time cap reached; liveness tests treat this as failure.
    TimeCap(u64),
}

/// The event loop over a fixed set of nodes.
pub struct Network<N: SimNode> {
    pub nodes: Vec<N>,
    policy: LinkPolicy,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Event<N::Timer>>>,
    rng: ChaCha12Rng,
    trace_hash: Hash256,
    trace: Option<Vec<u8>>,
    pub delivered_msgs: u64,
    pub dropped_msgs: u64,
    /// Post-GST honest-to-honest deliveries that broke the delta bound.
    pub delivery_violations: Vec<String>,
}

impl<N: SimNode> Network<N> {
    pub fn new(nodes: Vec<N>, policy: LinkPolicy, seed: [u8; 32]) -> Network<N> {
        Network {
            nodes,
            policy,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha12Rng::from_seed(seed),
            trace_hash: Hash256::ZERO,
            trace: None,
            delivered_msgs: 0,
            dropped_msgs: 0,
            delivery_violations: Vec::new(),
        }
    }

    /// Keep the full textual event trace in memory (for dumps).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Rolling hash over every processed event; equal hashes mean
    /// bit-identical schedules.
    pub fn trace_hash(&self) -> Hash256 {
        self.trace_hash
    }

    pub fn take_trace(&mut self) -> Option<Vec<u8>> {
        self.trace.take()
    }

    /// Run all `on_start` handlers; call once before the first `run_until`.
    pub fn start(&mut self) {
        for node in 0..self.nodes.len() {
            let mut ctx = Ctx::new(node, self.now);
            self.nodes[node].on_start(&mut ctx);
            self.flush(node, ctx);
        }
    }

    fn flush(&mut self, from: NodeId, ctx: Ctx<N::Timer>) {
        for (to, payload) in ctx.sends {
            self.route(from, to, payload);
        }
        for (at, timer) in ctx.timers {
            self.seq += 1;
            self.queue.push(Reverse(Event {
                at,
                seq: self.seq,
                kind: EventKind::Timer { node: from, timer },
            }));
        }
    }

    fn route(&mut self, from: NodeId, to: NodeId, payload: Vec<u8>) {
        let transfer = self.policy.transfer_ms(payload.len());
        let delay = if self.now < self.policy.gst_ms {
            if self.rng.gen::<f64>() < self.policy.pre_gst_drop {
                self.dropped_msgs += 1;
                return;
            }
            let hi = self.policy.delta_ms * self.policy.pre_gst_delay_mult.max(1);
            self.rng
                .gen_range(self.policy.delta_ms..=hi.max(self.policy.delta_ms))
        } else {
            // keep delay + transfer within delta whenever the payload fits
            // the bandwidth window
            let headroom = self.policy.delta_ms.saturating_sub(transfer).max(1);
            self.rng.gen_range(1..=headroom)
        };
        self.seq += 1;
        self.queue.push(Reverse(Event {
            at: self.now + delay + transfer,
            seq: self.seq,
            kind: EventKind::Deliver {
                from,
                to,
                payload,
                sent_at: self.now,
            },
        }));
    }

    fn note(&mut self, line: String) {
        self.trace_hash = sha256_parts(&[self.trace_hash.as_bytes(), line.as_bytes()]);
        if let Some(buf) = &mut self.trace {
            buf.extend_from_slice(line.as_bytes());
            buf.push(b'\n');
        }
    }

    fn dispatch(&mut self, event: Event<N::Timer>) {
        self.now = event.at;
        match event.kind {
            EventKind::Deliver {
                from,
                to,
                payload,
                sent_at,
            } => {
                self.note(format!(
                    "t={} seq={} deliver from={} to={} bytes={} sent={}",
                    event.at,
                    event.seq,
                    from,
                    to,
                    payload.len(),
                    sent_at
                ));
                self.delivered_msgs += 1;
                if sent_at >= self.policy.gst_ms
                    && self.nodes[from].is_honest()
                    && self.nodes[to].is_honest()
                {
                    let transfer = self.policy.transfer_ms(payload.len());
                    let bound = if transfer + 1 <= self.policy.delta_ms {
                        self.policy.delta_ms
                    } else {
                        self.policy.delta_ms + transfer
                    };
                    if event.at - sent_at > bound {
                        self.delivery_violations.push(format!(
                            "delivery {}->{} took {}ms (bound {}ms)",
                            from,
                            to,
                            event.at - sent_at,
                            bound
                        ));
                    }
                }
                let mut ctx = Ctx::new(to, self.now);
                self.nodes[to].on_message(&mut ctx, from, payload);
                self.flush(to, ctx);
            }
            EventKind::Timer { node, timer } => {
                self.note(format!(
                    "t={} seq={} timer node={} kind={:?}",
                    event.at, event.seq, node, timer
                ));
                let mut ctx = Ctx::new(node, self.now);
                self.nodes[node].on_timer(&mut ctx, timer);
                self.flush(node, ctx);
            }
        }
    }

    /// Pop events in order until the predicate holds, the queue drains, or
    /// simulated time passes `cap_ms`.
    pub fn run_until<F>(&mut self, mut predicate: F, cap_ms: u64) -> RunOutcome
    where
        F: FnMut(&Network<N>) -> bool,
    {
        loop {
            if predicate(self) {
                return RunOutcome::Satisfied(self.now);
            }
            let Some(Reverse(event)) = self.queue.pop() else {
                return RunOutcome::QueueEmpty(self.now);
            };
            if event.at > cap_ms {
                self.queue.push(Reverse(event));
                return RunOutcome::TimeCap(self.now);
            }
            self.dispatch(event);
        }
    }
}
