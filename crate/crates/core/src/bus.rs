//! Deterministic in-process message bus. Every delivered or dropped message is
//! recorded in the trace; faults are explicit state, never timing races.

use std::collections::BTreeSet;

use crate::codec::Frame;
use crate::trace::{Channel, Trace};

#[derive(Debug, Clone, Default)]
pub struct Bus {
    trace: Trace,
    blocked: BTreeSet<String>,
    cut: BTreeSet<(String, String)>,
    sent: u64,
    dropped: u64,
}

impl Bus {
    pub fn new(trace: Trace) -> Self {
        Bus { trace, ..Default::default() }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Messages to or from `endpoint` are dropped until [`Bus::heal`].
    pub fn isolate(&mut self, endpoint: &str) {
        self.blocked.insert(endpoint.to_string());
    }

    pub fn heal(&mut self, endpoint: &str) {
        self.blocked.remove(endpoint);
    }

    pub fn is_isolated(&self, endpoint: &str) -> bool {
        self.blocked.contains(endpoint)
    }

    /// Drops messages between `a` and `b` in both directions until [`Bus::restore_link`].
    pub fn cut_link(&mut self, a: &str, b: &str) {
        self.cut.insert(Self::link(a, b));
    }

    pub fn restore_link(&mut self, a: &str, b: &str) {
        self.cut.remove(&Self::link(a, b));
    }

    fn link(a: &str, b: &str) -> (String, String) {
        if a <= b { (a.into(), b.into()) } else { (b.into(), a.into()) }
    }

    pub fn reachable(&self, from: &str, to: &str) -> bool {
        !self.blocked.contains(from) && !self.blocked.contains(to) && !self.cut.contains(&Self::link(from, to))
    }

    /// Records the message; returns whether it was delivered.
    pub fn send(&mut self, from: &str, to: &str, kind: &str, frame: Frame) -> bool {
        let delivered = self.reachable(from, to);
        let kind = if delivered { kind.to_string() } else { format!("{kind}!dropped") };
        self.trace.record(Channel::Bus { from: from.into(), to: to.into(), kind }, frame);
        if delivered {
            self.sent += 1;
        } else {
            self.dropped += 1;
        }
        delivered
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.sent, self.dropped)
    }
}
