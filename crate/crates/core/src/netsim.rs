//! Deterministic discrete-event bus with scripted adversarial links.
//!
//! Events are ordered by `(time, class, seq)`: lower classes fire first
//! within a tick, and `seq` breaks ties in scheduling order. All randomness
//! comes from one seeded ChaCha stream.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, Digest};

/// Interference on messages from `from` to `to`; `"*"` matches any actor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRule {
    pub from: String,
    pub to: String,
    /// Also apply to the reverse direction.
    #[serde(default)]
    pub both: bool,
    /// Probability of dropping each message.
    #[serde(default)]
    pub drop: f64,
    /// Indices (per link, from 0) of messages that are always dropped.
    #[serde(default)]
    pub drop_nth: BTreeSet<u64>,
    /// Fixed extra delay in ticks.
    #[serde(default)]
    pub delay: u64,
    /// Uniform extra delay in `0..=jitter` ticks; reorders messages.
    #[serde(default)]
    pub jitter: u64,
}

impl LinkRule {
    fn matches(&self, from: &str, to: &str) -> bool {
        let m = |pat: &str, v: &str| pat == "*" || pat == v;
        (m(&self.from, from) && m(&self.to, to)) || (self.both && m(&self.from, to) && m(&self.to, from))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind<M> {
    Deliver { from: String, to: String, msg: M, digest: Digest },
    Timer { tag: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<M> {
    pub time: u64,
    pub class: u8,
    pub kind: EventKind<M>,
}

/// Delivery class; timers use their own classes above this.
pub const DELIVERY: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    time: u64,
    class: u8,
    seq: u64,
}

#[derive(Debug)]
pub struct Net<M> {
    now: u64,
    base_delay: u64,
    rules: Vec<LinkRule>,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<Key>>,
    payloads: BTreeMap<u64, EventKind<M>>,
    seq: u64,
    link_counts: BTreeMap<(String, String), u64>,
    trace: Vec<String>,
    delivered: u64,
    dropped: u64,
}

impl<M> Net<M> {
    pub fn new(seed: u64, base_delay: u64, rules: Vec<LinkRule>) -> Net<M> {
        Net {
            now: 0,
            base_delay: base_delay.max(1),
            rules,
            rng: ChaCha20Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            payloads: BTreeMap::new(),
            seq: 0,
            link_counts: BTreeMap::new(),
            trace: Vec::new(),
            delivered: 0,
            dropped: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn push(&mut self, time: u64, class: u8, kind: EventKind<M>) {
        self.seq += 1;
        self.queue.push(Reverse(Key { time, class, seq: self.seq }));
        self.payloads.insert(self.seq, kind);
    }

    pub fn schedule(&mut self, time: u64, class: u8, tag: &str) {
        assert!(class > DELIVERY, "class 0 is reserved for deliveries");
        self.push(time.max(self.now), class, EventKind::Timer { tag: tag.to_string() });
    }

    /// Sends a message subject to the link rules. Returns whether it will
    /// be delivered.
    pub fn send(&mut self, from: &str, to: &str, msg: M, digest: Digest) -> bool {
        let link = (from.to_string(), to.to_string());
        let n = *self.link_counts.entry(link.clone()).and_modify(|c| *c += 1).or_insert(0);
        let mut delay = self.base_delay;
        let mut drop = false;
        for i in 0..self.rules.len() {
            if !self.rules[i].matches(from, to) {
                continue;
            }
            let (p, nth, fixed, jitter) = {
                let r = &self.rules[i];
                (r.drop, r.drop_nth.contains(&n), r.delay, r.jitter)
            };
            drop |= nth || (p > 0.0 && self.rng.gen_bool(p.min(1.0)));
            delay += fixed;
            if jitter > 0 {
                delay += self.rng.gen_range(0..=jitter);
            }
        }
        if drop {
            self.dropped += 1;
            self.trace.push(format!("t={} drop {from} {to} {}", self.now, digest.short()));
            return false;
        }
        self.trace.push(format!("t={} send {from} {to} {}", self.now, digest.short()));
        let at = self.now + delay;
        self.push(at, DELIVERY, EventKind::Deliver { from: link.0, to: link.1, msg, digest });
        true
    }

    /// Next event, advancing the clock.
    pub fn pop(&mut self) -> Option<Event<M>> {
        let Reverse(key) = self.queue.pop()?;
        let kind = self.payloads.remove(&key.seq).expect("payload stored with key");
        self.now = key.time;
        if let EventKind::Deliver { from, to, digest, .. } = &kind {
            self.delivered += 1;
            self.trace.push(format!("t={} deliver {from} {to} {}", key.time, digest.short()));
        }
        Some(Event { time: key.time, class: key.class, kind })
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(k)| k.time)
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_digest(&self) -> Digest {
        sha256(self.trace.join("\n").as_bytes())
    }

    /// `(delivered, dropped)` message counts.
    pub fn counts(&self) -> (u64, u64) {
        (self.delivered, self.dropped)
    }

    /// Messages scheduled on a link so far.
    pub fn sent_on(&self, from: &str, to: &str) -> u64 {
        self.link_counts.get(&(from.to_string(), to.to_string())).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(i: u8) -> Digest {
        Digest([i; 32])
    }

    fn drain(net: &mut Net<u8>) -> Vec<(u64, u8, Option<u8>)> {
        let mut out = Vec::new();
        while let Some(e) = net.pop() {
            let m = match e.kind {
                EventKind::Deliver { msg, .. } => Some(msg),
                EventKind::Timer { .. } => None,
            };
            out.push((e.time, e.class, m));
        }
        out
    }

    #[test]
    fn deliveries_precede_timers_within_a_tick() {
        let mut net: Net<u8> = Net::new(1, 1, vec![]);
        net.schedule(1, 2, "epoch");
        net.send("a", "b", 7, d(7));
        net.schedule(1, 1, "chain");
        assert_eq!(drain(&mut net), vec![(1, 0, Some(7)), (1, 1, None), (1, 2, None)]);
    }

    #[test]
    fn drop_all_on_one_link_leaves_others() {
        let rule = LinkRule { from: "ves".into(), to: "client".into(), both: true, drop: 1.0, ..LinkRule::default() };
        let mut net: Net<u8> = Net::new(1, 1, vec![rule]);
        for i in 0..10 {
            assert!(!net.send("ves", "client", i, d(i)));
            assert!(!net.send("client", "ves", i, d(i)));
            assert!(net.send("ves", "nsb", i, d(i)));
        }
        assert_eq!(drain(&mut net).len(), 10);
        assert_eq!(net.counts(), (10, 20));
    }

    #[test]
    fn nth_drop_and_fixed_delay() {
        let rule = LinkRule { from: "a".into(), to: "*".into(), drop_nth: BTreeSet::from([1]), delay: 3, ..LinkRule::default() };
        let mut net: Net<u8> = Net::new(1, 1, vec![rule]);
        assert!(net.send("a", "b", 0, d(0)));
        assert!(!net.send("a", "b", 1, d(1)));
        assert!(net.send("a", "c", 2, d(2)));
        assert!(net.send("b", "a", 3, d(3)));
        let times: Vec<(u64, Option<u8>)> = drain(&mut net).into_iter().map(|(t, _, m)| (t, m)).collect();
        assert_eq!(times, vec![(1, Some(3)), (4, Some(0)), (4, Some(2))]);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let rule = LinkRule { from: "*".into(), to: "*".into(), drop: 0.3, jitter: 4, ..LinkRule::default() };
            let mut net: Net<u8> = Net::new(seed, 1, vec![rule]);
            for i in 0..50 {
                net.send("a", "b", i, d(i));
            }
            let order: Vec<_> = drain(&mut net);
            (order, net.trace_digest())
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9).1, run(10).1);
    }

    #[test]
    fn jitter_can_reorder() {
        let rule = LinkRule { from: "*".into(), to: "*".into(), jitter: 5, ..LinkRule::default() };
        let mut net: Net<u8> = Net::new(3, 1, vec![rule]);
        for i in 0..20 {
            net.send("a", "b", i, d(i));
        }
        let msgs: Vec<u8> = drain(&mut net).into_iter().filter_map(|e| e.2).collect();
        let mut sorted = msgs.clone();
        sorted.sort();
        assert_ne!(msgs, sorted);
        assert_eq!(msgs.len(), 20);
    }
}
